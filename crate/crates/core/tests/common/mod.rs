#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random smooth expression text over the given names. Every operation is
/// kept inside its domain for all real inputs.
pub fn random_expr(rng: &mut ChaCha8Rng, depth: usize, names: &[&str]) -> String {
    if depth == 0 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.75) {
            names[rng.gen_range(0..names.len())].to_string()
        } else {
            format!("{:?}", rng.gen_range(0.5..2.0))
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_expr(rng, depth - 1, names);
    match rng.gen_range(0..12) {
        0 => format!("({} + {})", sub(rng), sub(rng)),
        1 => format!("({} - {})", sub(rng), sub(rng)),
        2 | 3 => format!("({} * {})", sub(rng), sub(rng)),
        4 => format!("({} / (2 + cos({})))", sub(rng), sub(rng)),
        5 => format!("(1.5 + sin({}))^{:?}", sub(rng), rng.gen_range(0.5..3.0)),
        6 => format!("sin({})", sub(rng)),
        7 => format!("cos({})", sub(rng)),
        8 => format!("tanh({})", sub(rng)),
        9 => format!("exp(tanh({}))", sub(rng)),
        10 => format!("sqrt(1 + ({})^2)", sub(rng)),
        _ => format!("-log(2 + sin({}))", sub(rng)),
    }
}

/// A random model with `n` states `x0..` and two parameters `a`, `b`.
pub fn random_model_text(rng: &mut ChaCha8Rng, n: usize, depth: usize) -> String {
    let states: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let mut names: Vec<&str> = states.iter().map(String::as_str).collect();
    names.extend(["a", "b", "t"]);
    let mut text = format!("states: {}\nparams: a = 0.7, b = 1.3\n", states.join(", "));
    for s in &states {
        text.push_str(&format!("d{s}/dt = {}\n", random_expr(rng, depth, &names)));
    }
    text
}

/// Maximum absolute entry difference relative to `max(1, max |a|)`.
pub fn relative_max_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
