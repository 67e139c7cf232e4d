use ndarray::Array2;

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-300;

/// Cross entropy averaged over the three views and every instance with a
/// target; `None` targets (abandoned instances) are skipped. Returns the
/// loss and its gradient w.r.t. each view's probability rows.
pub fn supervised_loss(
    z: [&Array2<f64>; 3],
    targets: &[Option<usize>],
) -> Result<(f64, [Array2<f64>; 3])> {
    let (n, k) = z[0].dim();
    if z.iter().any(|v| v.dim() != (n, k)) || targets.len() != n {
        return Err(Error::Dimension(
            "supervised loss inputs disagree in shape".into(),
        ));
    }
    let mut grads = [
        Array2::zeros((n, k)),
        Array2::zeros((n, k)),
        Array2::zeros((n, k)),
    ];
    let contributing = targets.iter().filter(|t| t.is_some()).count();
    if contributing == 0 {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / (3 * contributing) as f64;
    let mut loss = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let Some(y) = *target else { continue };
        if y >= k {
            return Err(Error::InvalidInput(format!("target {y} outside {k} heads")));
        }
        for m in 0..3 {
            let p = z[m][[i, y]].max(PROB_FLOOR);
            loss -= p.ln() * scale;
            grads[m][[i, y]] = -scale / p;
        }
    }
    Ok((loss, grads))
}
