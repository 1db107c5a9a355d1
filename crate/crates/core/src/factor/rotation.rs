use nalgebra::DMatrix;

use super::FactorError;

/// Result of an oblique rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    pub pattern: DMatrix<f64>,
    pub structure: DMatrix<f64>,
    pub factor_corr: DMatrix<f64>,
    /// Full k×k transform with `pattern = loadings · rotation`.
    pub rotation: DMatrix<f64>,
}

const VARIMAX_EPS: f64 = 1e-5;
const VARIMAX_MAX_ITER: usize = 1000;

/// Kaiser-normalized varimax. Returns the rotated loadings and the orthogonal
/// rotation matrix. Single-column input is returned unchanged.
pub fn varimax(loadings: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, k) = loadings.shape();
    if k < 2 {
        return (loadings.clone(), DMatrix::identity(k, k));
    }
    let row_norms: Vec<f64> = (0..p).map(|i| loadings.row(i).norm()).collect();
    let x = DMatrix::from_fn(p, k, |i, j| {
        if row_norms[i] > 0.0 {
            loadings[(i, j)] / row_norms[i]
        } else {
            0.0
        }
    });

    let mut rot = DMatrix::<f64>::identity(k, k);
    let mut d = 0.0;
    for _ in 0..VARIMAX_MAX_ITER {
        let z = &x * &rot;
        let col_ss: Vec<f64> = (0..k).map(|j| z.column(j).norm_squared() / p as f64).collect();
        let target = DMatrix::from_fn(p, k, |i, j| z[(i, j)].powi(3) - z[(i, j)] * col_ss[j]);
        let b = x.transpose() * target;
        let svd = b.svd(true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        rot = u * v_t;
        let d_past = d;
        d = svd.singular_values.sum();
        if d < d_past * (1.0 + VARIMAX_EPS) {
            break;
        }
    }

    let mut rotated = &x * &rot;
    for i in 0..p {
        for j in 0..k {
            rotated[(i, j)] *= row_norms[i];
        }
    }
    (rotated, rot)
}

/// Promax: varimax, then a least-squares fit towards the sign-preserving
/// `|loading|^kappa` target, rescaled so the factor correlations have a unit
/// diagonal.
///
/// Columns are sign-flipped to have positive loading sums and ordered by
/// descending sum of squared pattern loadings.
pub fn promax_rotate(loadings: &DMatrix<f64>, kappa: u32) -> Result<Rotation, FactorError> {
    let k = loadings.ncols();
    if k == 0 {
        return Err(FactorError::InvalidFactorCount {
            k,
            p: loadings.nrows(),
        });
    }
    if k == 1 {
        return Ok(Rotation {
            pattern: loadings.clone(),
            structure: loadings.clone(),
            factor_corr: DMatrix::identity(1, 1),
            rotation: DMatrix::identity(1, 1),
        });
    }

    let (vm, vm_rot) = varimax(loadings);
    let power = kappa.max(1) as i32 - 1;
    let target = vm.map(|v| v * v.abs().powi(power));

    // Least squares U = (X'X)^-1 X'Q.
    let xtx = vm.transpose() * &vm;
    let xtq = vm.transpose() * &target;
    let u = xtx
        .cholesky()
        .ok_or(FactorError::DegenerateTarget)?
        .solve(&xtq);
    let utu_inv = (u.transpose() * &u)
        .try_inverse()
        .ok_or(FactorError::DegenerateTarget)?;
    let scale: Vec<f64> = (0..k).map(|j| utu_inv[(j, j)].sqrt()).collect();
    if scale.iter().any(|s| !s.is_finite()) {
        return Err(FactorError::DegenerateTarget);
    }
    let mut u_scaled = u;
    for j in 0..k {
        for i in 0..k {
            u_scaled[(i, j)] *= scale[j];
        }
    }

    let total = &vm_rot * &u_scaled;
    let phi = (total.transpose() * &total)
        .try_inverse()
        .ok_or(FactorError::DegenerateTarget)?;
    let pattern = &vm * &u_scaled;

    // Canonical column order and sign.
    let mut order: Vec<usize> = (0..k).collect();
    let ss: Vec<f64> = (0..k).map(|j| pattern.column(j).norm_squared()).collect();
    order.sort_by(|&a, &b| ss[b].total_cmp(&ss[a]).then(a.cmp(&b)));
    let signs: Vec<f64> = (0..k)
        .map(|j| if pattern.column(j).sum() < 0.0 { -1.0 } else { 1.0 })
        .collect();

    let p = pattern.nrows();
    let pattern = DMatrix::from_fn(p, k, |i, j| pattern[(i, order[j])] * signs[order[j]]);
    let rotation = DMatrix::from_fn(k, k, |i, j| total[(i, order[j])] * signs[order[j]]);
    let mut factor_corr = DMatrix::from_fn(k, k, |i, j| {
        phi[(order[i], order[j])] * signs[order[i]] * signs[order[j]]
    });
    factor_corr = (&factor_corr + factor_corr.transpose()) * 0.5;
    for j in 0..k {
        factor_corr[(j, j)] = 1.0;
    }
    let structure = &pattern * &factor_corr;

    Ok(Rotation {
        pattern,
        structure,
        factor_corr,
        rotation,
    })
}

/// Map extracted factor columns onto reference factors.
///
/// `reference[i]` is the reference factor of item `i`. Each column is mapped
/// to the reference factor most common among the items whose largest
/// |loading| falls in that column. Returns the column → reference map (None
/// for unmatched or contested columns) and the number of items whose argmax
/// column maps to their own reference factor.
pub fn align_factors(pattern: &DMatrix<f64>, reference: &[usize]) -> (Vec<Option<usize>>, usize) {
    let (p, k) = pattern.shape();
    assert_eq!(p, reference.len(), "one reference factor per item");
    let n_ref = reference.iter().copied().max().map_or(0, |m| m + 1);
    let argmax: Vec<usize> = (0..p)
        .map(|i| {
            (0..k)
                .max_by(|&a, &b| pattern[(i, a)].abs().total_cmp(&pattern[(i, b)].abs()).then(b.cmp(&a)))
                .unwrap_or(0)
        })
        .collect();

    let mut counts = vec![vec![0usize; n_ref]; k];
    for (i, &col) in argmax.iter().enumerate() {
        counts[col][reference[i]] += 1;
    }
    let mut mapping: Vec<Option<usize>> = counts
        .iter()
        .map(|c| {
            let (best, &n) = c.iter().enumerate().max_by_key(|(f, &n)| (n, std::cmp::Reverse(*f)))?;
            (n > 0).then_some(best)
        })
        .collect();
    // A reference factor claimed by several columns keeps only the strongest claim.
    for f in 0..n_ref {
        let claimants: Vec<usize> = (0..k).filter(|&c| mapping[c] == Some(f)).collect();
        if claimants.len() > 1 {
            let keep = *claimants
                .iter()
                .max_by_key(|&&c| (counts[c][f], std::cmp::Reverse(c)))
                .expect("non-empty");
            for c in claimants {
                if c != keep {
                    mapping[c] = None;
                }
            }
        }
    }
    let matched = (0..p)
        .filter(|&i| mapping[argmax[i]] == Some(reference[i]))
        .count();
    (mapping, matched)
}
