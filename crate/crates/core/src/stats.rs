//! Small numeric helpers with fixed conventions (population moments,
//! half-up decimal rounding, lower median).

/// `num/den` rounded half-up to `decimals` places, computed in integers.
pub fn ratio_half_up(num: u64, den: u64, decimals: u32) -> f64 {
    assert!(den > 0, "ratio with zero denominator");
    let scale = 10u128.pow(decimals);
    let (num, den) = (u128::from(num), u128::from(den));
    let scaled = (2 * num * scale + den) / (2 * den);
    scaled as f64 / scale as f64
}

/// `100·count/total` rounded half-up.
pub fn percent_half_up(count: u64, total: u64, decimals: u32) -> f64 {
    ratio_half_up(100 * count, total, decimals)
}

/// Half-up rounding of a float; exact halves in binary round away from zero.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    let v = (x * s + 0.5).floor() / s;
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation (divide by n).
pub fn pop_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Lower median: element `(n−1)/2` of the sorted values.
pub fn lower_median(xs: &[u64]) -> Option<u64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

/// Render with a fixed number of decimals, normalizing `-0` to `0`.
pub fn fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}
