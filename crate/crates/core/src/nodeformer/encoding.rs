use numcore::Tensor;

/// Sinusoidal encoding: `sin(t / 10000^{2k/d})` at index `2k`, the cosine at `2k + 1`.
pub fn temporal_encoding(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let k = j / 2;
            let angle = t as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// `[N·T, d]` table whose row `i·T + t` is the encoding of window position `t`.
pub fn temporal_encoding_table(n_stocks: usize, steps: usize, d: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..steps).map(|t| temporal_encoding(t, d)).collect();
    let mut data = Vec::with_capacity(n_stocks * steps * d);
    for _ in 0..n_stocks {
        for r in &rows {
            data.extend_from_slice(r);
        }
    }
    Tensor::matrix(n_stocks * steps, d, data).expect("bounded encodings")
}
