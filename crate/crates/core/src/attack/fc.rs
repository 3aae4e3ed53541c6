use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bias gradients at or below this magnitude are not divided by.
pub const DIV_EPS: f64 = 1e-12;

fn dense_dims(dw: &Tensor, db: &Tensor) -> Result<(usize, usize)> {
    match *dw.shape() {
        [c, i] if db.shape() == [c] => Ok((c, i)),
        _ => Err(Error::ShapeMismatch {
            context: "dense gradients",
            expected: alloc::vec![db.len(), dw.len() / db.len().max(1)],
            found: dw.shape().to_vec(),
        }),
    }
}

/// Reads the dense layer's input off its gradients:
/// `x[n] = dW[m*, n] / db[m*]` with `m* = argmax |db[m]|`.
///
/// Returns the input and the node `m*` used.
pub fn recover_fc_input(dw: &Tensor, db: &Tensor) -> Result<(Tensor, usize)> {
    dense_dims(dw, db)?;
    let node = db
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(m, _)| m)
        .ok_or(Error::AllBiasGradientsZero)?;
    Ok((recover_fc_input_at(dw, db, node)?, node))
}

/// Same estimate through a chosen node `m`. Fails with
/// [`Error::AllBiasGradientsZero`] when `|db[m]| <= DIV_EPS`.
pub fn recover_fc_input_at(dw: &Tensor, db: &Tensor, node: usize) -> Result<Tensor> {
    let (c, i) = dense_dims(dw, db)?;
    if node >= c {
        return Err(Error::ShapeMismatch {
            context: "dense node index",
            expected: alloc::vec![c],
            found: alloc::vec![node],
        });
    }
    let g = db.data()[node];
    if g.abs() <= DIV_EPS {
        return Err(Error::AllBiasGradientsZero);
    }
    let row = &dw.data()[node * i..(node + 1) * i];
    Ok(Tensor::vector(row.iter().map(|v| v / g).collect()))
}

/// Least-squares combination of every per-node estimate with
/// `|db[m]| > DIV_EPS`: `x[n] = sum_m db[m] dW[m,n] / sum_m db[m]^2`.
pub fn recover_fc_input_averaged(dw: &Tensor, db: &Tensor) -> Result<Tensor> {
    let (_, i) = dense_dims(dw, db)?;
    let nodes: Vec<(usize, f64)> = db
        .data()
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, g)| g.abs() > DIV_EPS)
        .collect();
    if nodes.is_empty() {
        return Err(Error::AllBiasGradientsZero);
    }
    let denom: f64 = nodes.iter().map(|(_, g)| g * g).sum();
    let x = (0..i)
        .map(|n| nodes.iter().map(|&(m, g)| g * dw.data()[m * i + n]).sum::<f64>() / denom)
        .collect();
    Ok(Tensor::vector(x))
}

/// `dx[n] = sum_m db[m] * W[m, n]`; the bias gradient equals `dl/dz`.
pub fn fc_input_gradient(db: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (c, i) = match *w.shape() {
        [c, i] => (c, i),
        _ => {
            return Err(Error::ShapeMismatch {
                context: "dense weights",
                expected: alloc::vec![db.len(), 0],
                found: w.shape().to_vec(),
            })
        }
    };
    db.expect_shape("dense bias gradient", &[c])?;
    let mut dx = alloc::vec![0.0; i];
    for (row, &g) in w.data().chunks_exact(i).zip(db.data()) {
        for (d, wv) in dx.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
    Ok(Tensor::vector(dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_node_recovery() {
        let dw = Tensor::new(vec![1, 2], vec![0.5, -1.25]).unwrap();
        let (x, m) = recover_fc_input(&dw, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(x.data(), &[0.5, -1.25]);
        assert_eq!(m, 0);
    }

    #[test]
    fn zero_bias_gradients_fail() {
        let dw = Tensor::zeros(&[2, 3]);
        let db = Tensor::zeros(&[2]);
        assert_eq!(recover_fc_input(&dw, &db).unwrap_err(), Error::AllBiasGradientsZero);
        assert_eq!(recover_fc_input_averaged(&dw, &db).unwrap_err(), Error::AllBiasGradientsZero);
    }

    #[test]
    fn picks_largest_bias_gradient() {
        // rows are x * db[m]; x = [2, -1]
        let db = Tensor::vector(vec![0.1, -0.7, 0.3]);
        let dw = Tensor::new(vec![3, 2], vec![0.2, -0.1, -1.4, 0.7, 0.6, -0.3]).unwrap();
        let (x, m) = recover_fc_input(&dw, &db).unwrap();
        assert_eq!(m, 1);
        assert_eq!(x.data(), &[2.0, -1.0]);
        let avg = recover_fc_input_averaged(&dw, &db).unwrap();
        assert!((avg.data()[0] - 2.0).abs() < 1e-15 && (avg.data()[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn input_gradient_examples() {
        let w = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let dx = fc_input_gradient(&Tensor::vector(vec![1.0, -1.0]), &w).unwrap();
        assert_eq!(dx.data(), &[2.0, -3.0]);
        let dx = fc_input_gradient(&Tensor::zeros(&[2]), &w).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn scale_equivariance(
            x in proptest::collection::vec(-3.0f64..3.0, 1..12),
            db in proptest::collection::vec(-1.0f64..1.0, 1..6),
            scale in proptest::sample::select(vec![-8.0f64, -0.5, 0.25, 2.0, 1024.0]),
        ) {
            proptest::prop_assume!(db.iter().any(|g| g.abs() > 1e-3));
            let (c, i) = (db.len(), x.len());
            let dw = Tensor::from_fn(&[c, i], |k| x[k % i] * db[k / i]);
            let dbt = Tensor::vector(db.clone());
            let (a, _) = recover_fc_input(&dw, &dbt).unwrap();
            // power-of-two scales are exact, so the quotient is bit-identical
            let (b, _) = recover_fc_input(&dw.map(|v| v * scale), &dbt.map(|v| v * scale)).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                proptest::prop_assert!((p - q).abs() <= f64::EPSILON * p.abs());
            }
        }
    }
}
