//! 3×3 Gaussian smoothing of patch scores over the frame grid.

use crate::error::{Error, Result};
use crate::types::TokenLayout;

/// Normalized 3×3 Gaussian kernel with σ = 1, indexed `[dr + 1][dc + 1]`.
pub fn gaussian_kernel() -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut z = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (dr, dc) = (i as f64 - 1.0, j as f64 - 1.0);
            *w = (-(dr * dr + dc * dc) / 2.0).exp();
            z += *w;
        }
    }
    for w in k.iter_mut().flatten() {
        *w /= z;
    }
    k
}

/// Blends every patch score with its Gaussian-smoothed neighbourhood:
/// `(1 − α)·s + α·(G ⊛ s)`, replicating edge values as padding. Camera and
/// register scores pass through unchanged.
pub fn gaussian_smooth(scores: &[f64], layout: &TokenLayout, alpha: f64) -> Result<Vec<f64>> {
    if scores.len() != layout.len() {
        return Err(Error::GridMismatch {
            expected: layout.len(),
            found: scores.len(),
        });
    }
    let mut out = scores.to_vec();
    if alpha == 0.0 || layout.patches() == 0 {
        return Ok(out);
    }
    let kernel = gaussian_kernel();
    let (rows, cols) = (layout.grid_rows as isize, layout.grid_cols as isize);
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, rows - 1) as usize;
        let c = c.clamp(0, cols - 1) as usize;
        scores[layout.patch_index(r, c)]
    };
    for r in 0..rows {
        for c in 0..cols {
            let mut conv = 0.0;
            for (i, krow) in kernel.iter().enumerate() {
                for (j, w) in krow.iter().enumerate() {
                    conv += w * at(r + i as isize - 1, c + j as isize - 1);
                }
            }
            let idx = layout.patch_index(r as usize, c as usize);
            out[idx] = (1.0 - alpha) * scores[idx] + alpha * conv;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize, specials: usize) -> TokenLayout {
        TokenLayout {
            camera: specials.min(1),
            register: specials.saturating_sub(1),
            grid_rows: rows,
            grid_cols: cols,
        }
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel();
        let total: f64 = k.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(k[0][0], k[2][2]);
        assert_eq!(k[0][1], k[1][0]);
        assert!(k[1][1] > k[0][1] && k[0][1] > k[0][0]);
    }

    #[test]
    fn alpha_zero_is_identity() {
        let l = grid(3, 4, 2);
        let s: Vec<f64> = (0..14).map(|i| (i * i % 7) as f64).collect();
        assert_eq!(gaussian_smooth(&s, &l, 0.0).unwrap(), s);
    }

    #[test]
    fn constant_field_is_preserved() {
        let l = grid(4, 5, 4);
        let s = vec![2.5; 24];
        for a in [0.0, 0.3, 1.0] {
            let out = gaussian_smooth(&s, &l, a).unwrap();
            for v in out {
                assert!((v - 2.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn spike_matches_dense_convolution() {
        // dense oracle: explicit padded 6×6 array and a direct 3×3 sum
        let l = grid(4, 4, 1);
        let mut s = vec![0.0; 17];
        s[0] = 9.0; // camera token, untouched
        s[l.patch_index(1, 2)] = 1.0;
        let out = gaussian_smooth(&s, &l, 0.5).unwrap();

        let e = std::f64::consts::E;
        let w = |dr: i32, dc: i32| e.powf(-((dr * dr + dc * dc) as f64) / 2.0);
        let z: f64 = (-1..=1)
            .flat_map(|a| (-1..=1).map(move |b| (a, b)))
            .map(|(a, b)| w(a, b))
            .sum();
        let mut padded = [[0.0f64; 6]; 6];
        for r in 0..6 {
            for c in 0..6 {
                let rr = (r as i32 - 1).clamp(0, 3) as usize;
                let cc = (c as i32 - 1).clamp(0, 3) as usize;
                padded[r][c] = s[1 + rr * 4 + cc];
            }
        }
        assert_eq!(out[0], 9.0);
        for r in 0..4 {
            for c in 0..4 {
                let mut acc = 0.0;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        acc += w(dr, dc) / z
                            * padded[(r as i32 + 1 + dr) as usize][(c as i32 + 1 + dc) as usize];
                    }
                }
                let want = 0.5 * s[1 + r * 4 + c] + 0.5 * acc;
                let got = out[1 + r * 4 + c];
                assert!((got - want).abs() < 1e-14, "({r},{c}) {got} vs {want}");
            }
        }
    }

    #[test]
    fn grid_mismatch() {
        let l = grid(2, 2, 0);
        assert!(matches!(
            gaussian_smooth(&[1.0; 5], &l, 0.5),
            Err(Error::GridMismatch {
                expected: 4,
                found: 5
            })
        ));
    }
}
