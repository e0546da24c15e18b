/// Arithmetic mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Population standard deviation (divide by n).
pub fn population_std(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Rounds to two decimals and drops trailing zeros: 0.80 → "0.8", 1.00 → "1".
pub fn short(x: f64) -> String {
    let text = format!("{:.2}", x);
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text == "-0" {
        "0".to_string()
    } else {
        text.to_string()
    }
}

/// `"mean ± std"` over `values`, or `"n/a"` when empty.
pub fn mean_pm_std(values: &[f64]) -> String {
    match (mean(values), population_std(values)) {
        (Some(m), Some(s)) => format!("{} ± {}", short(m), short(s)),
        _ => "n/a".to_string(),
    }
}
