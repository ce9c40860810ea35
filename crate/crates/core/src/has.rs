//! Hierarchical attention selection.
//!
//! Adjacent layers' attention is fused by a head-wise matrix product, the
//! fused class-token row picks one patch token per head per layer, and the
//! picked tokens are concatenated behind the class token to form the input of
//! the final encoder layer:
//!
//! ```text
//! h_l = a_l · a_{l+1}                      (l < L−1;  h_{L−1} = a_{L−1})
//! A_k = argmax_{j ∈ 1..N} h_l[k][0][j]
//! z_f = [z_{L−1}[0]; z_1[A_1..A_K]; …; z_{L−1}[A_1..A_K]]
//! ```

use serde::{Deserialize, Serialize};

use crate::backbone::{head_row, AttentionStack};
use crate::error::{Error, Result};
use crate::tensor::kernels::gemm_nn;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `h_l = a_l · a_{l+1}`
    #[default]
    Pairwise,
    /// `h_l = a_l · a_{l+1} ⋯ a_{L−1}`
    Cumulative,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(FusionMode::Pairwise),
            "cumulative" => Ok(FusionMode::Cumulative),
            other => Err(Error::Config(format!(
                "fusion must be pairwise|cumulative, got {other:?}"
            ))),
        }
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[k, t, t2], &[k2, u, u2]) if k == k2 && t == t2 && t == u && u == u2 => Ok((k, t)),
        _ => Err(Error::shape("fuse_adjacent", a.shape(), b.shape())),
    }
}

/// Head-wise product `a^i · b^i`; heads never mix.
pub fn fuse_adjacent(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, t) = check_pair(a, b)?;
    let mut out = vec![0.0; k * t * t];
    let block = t * t;
    for h in 0..k {
        let range = h * block..(h + 1) * block;
        gemm_nn(
            t,
            t,
            t,
            &a.data()[range.clone()],
            &b.data()[range.clone()],
            &mut out[range],
        );
    }
    Tensor::new(&[k, t, t], out)
}

/// Full fused matrices for every captured layer.
pub fn fuse_stack(stack: &AttentionStack, mode: FusionMode) -> Result<Vec<Tensor>> {
    let n = stack.num_layers();
    let mut fused: Vec<Tensor> = Vec::with_capacity(n);
    match mode {
        FusionMode::Pairwise => {
            for l in 0..n {
                fused.push(match stack.layers.get(l + 1) {
                    Some(next) => fuse_adjacent(&stack.layers[l], next)?,
                    None => stack.layers[l].clone(),
                });
            }
        }
        FusionMode::Cumulative => {
            let mut acc: Option<Tensor> = None;
            for l in (0..n).rev() {
                let h = match &acc {
                    Some(tail) => fuse_adjacent(&stack.layers[l], tail)?,
                    None => stack.layers[l].clone(),
                };
                acc = Some(h.clone());
                fused.push(h);
            }
            fused.reverse();
        }
    }
    Ok(fused)
}

/// Row 0 of each fused matrix, `[K × T]` per layer, without forming the full
/// products. For pairwise fusion this is bit-identical to row 0 of
/// [`fuse_stack`].
pub fn fuse_class_rows(stack: &AttentionStack, mode: FusionMode) -> Result<Vec<Tensor>> {
    let n = stack.num_layers();
    let (k, t) = (stack.heads(), stack.tokens());
    for pair in stack.layers.windows(2) {
        check_pair(&pair[0], &pair[1])?;
    }
    let class_row = |l: usize| -> Vec<f64> {
        (0..k)
            .flat_map(|h| stack.row(l, h, 0).iter().copied())
            .collect()
    };
    let times = |rows: &[f64], l: usize| -> Vec<f64> {
        let mut out = vec![0.0; k * t];
        for h in 0..k {
            let m = &stack.layers[l].data()[h * t * t..(h + 1) * t * t];
            gemm_nn(1, t, t, &rows[h * t..(h + 1) * t], m, &mut out[h * t..(h + 1) * t]);
        }
        out
    };
    let mut fused = Vec::with_capacity(n);
    for l in 0..n {
        let mut rows = class_row(l);
        match mode {
            FusionMode::Pairwise => {
                if l + 1 < n {
                    rows = times(&rows, l + 1);
                }
            }
            FusionMode::Cumulative => {
                for next in l + 1..n {
                    rows = times(&rows, next);
                }
            }
        }
        fused.push(Tensor::new(&[k, t], rows)?);
    }
    Ok(fused)
}

/// Per-head argmax over patch columns `1..N`; ties go to the smallest index.
pub fn select_from_rows(rows: &Tensor) -> Result<Vec<usize>> {
    let (k, t) = rows.dims2()?;
    if t < 2 {
        return Err(Error::InvalidArgument(
            "selection needs at least one patch token".into(),
        ));
    }
    Ok((0..k)
        .map(|h| argmax_patch(&rows.data()[h * t..(h + 1) * t]))
        .collect())
}

/// Selection from a full fused `[K × T × T]` tensor, reading row 0.
pub fn select_indices(fused: &Tensor) -> Result<Vec<usize>> {
    let (k, t) = match fused.shape() {
        &[k, t, t2] if t == t2 => (k, t),
        other => return Err(Error::shape("select_indices", other, &[0, 0, 0])),
    };
    if t < 2 {
        return Err(Error::InvalidArgument(
            "selection needs at least one patch token".into(),
        ));
    }
    Ok((0..k).map(|h| argmax_patch(head_row(fused, h, 0))).collect())
}

fn argmax_patch(row: &[f64]) -> usize {
    let mut best = 1;
    for j in 2..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

/// Indices `A_1..A_K` picked in one layer (1-based layer number).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSelection {
    pub layer: usize,
    pub indices: Vec<usize>,
}

impl TokenSelection {
    /// `z_l^local`: rows `A_1..A_K` of `z_l`.
    pub fn gather(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        tape.gather_rows(states, &self.indices)
    }
}

/// Selections for all captured layers.
pub fn select_all(stack: &AttentionStack, mode: FusionMode) -> Result<Vec<TokenSelection>> {
    fuse_class_rows(stack, mode)?
        .iter()
        .enumerate()
        .map(|(l, rows)| {
            Ok(TokenSelection {
                layer: l + 1,
                indices: select_from_rows(rows)?,
            })
        })
        .collect()
}

/// `z_f = [z_{L−1}[0]; z_1^local; …; z_{L−1}^local]`.
pub fn assemble_input(
    tape: &mut Tape,
    states: &[Var],
    selections: &[TokenSelection],
) -> Result<Var> {
    let last = *states
        .last()
        .ok_or_else(|| Error::InvalidArgument("no layer states to assemble".into()))?;
    if selections.len() != states.len() {
        return Err(Error::InvalidArgument(format!(
            "selections cover {} layers, expected {}",
            selections.len(),
            states.len()
        )));
    }
    let mut parts = Vec::with_capacity(1 + selections.len());
    parts.push(tape.gather_rows(last, &[0])?);
    for (l, (sel, &z)) in selections.iter().zip(states).enumerate() {
        if sel.layer != l + 1 {
            return Err(Error::InvalidArgument(format!(
                "selection for layer {} found where layer {} expected",
                sel.layer,
                l + 1
            )));
        }
        parts.push(sel.gather(tape, z)?);
    }
    tape.concat_rows(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_head(rows: &[&[f64]]) -> Tensor {
        let t = rows.len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(&[1, t, t], data).unwrap()
    }

    fn eye_heads(k: usize, t: usize) -> Tensor {
        let mut data = Vec::new();
        for _ in 0..k {
            data.extend_from_slice(Tensor::eye(t).data());
        }
        Tensor::new(&[k, t, t], data).unwrap()
    }

    #[test]
    fn two_token_fusion() {
        let a = single_head(&[&[0.6, 0.4], &[0.2, 0.8]]);
        let b = single_head(&[&[0.5, 0.5], &[0.1, 0.9]]);
        let h = fuse_adjacent(&a, &b).unwrap();
        let want = [0.34, 0.66, 0.18, 0.82];
        for (x, y) in h.data().iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_fusion() {
        let a = Tensor::new(&[2, 2, 2], vec![0.6, 0.4, 0.2, 0.8, 0.3, 0.7, 0.9, 0.1]).unwrap();
        let i = eye_heads(2, 2);
        assert_eq!(fuse_adjacent(&i, &a).unwrap(), a);
        assert_eq!(fuse_adjacent(&a, &i).unwrap(), a);
        assert!(fuse_adjacent(&a, &eye_heads(1, 2)).is_err());
        assert!(fuse_adjacent(&a, &eye_heads(2, 3)).is_err());
    }

    #[test]
    fn selection_examples() {
        let rows = Tensor::new(&[1, 4], vec![0.1, 0.2, 0.5, 0.2]).unwrap();
        assert_eq!(select_from_rows(&rows).unwrap(), vec![2]);
        let rows = Tensor::new(&[1, 4], vec![0.4, 0.3, 0.3, 0.0]).unwrap();
        assert_eq!(select_from_rows(&rows).unwrap(), vec![1]);
        let rows = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        assert!(select_from_rows(&rows).is_err());
    }

    #[test]
    fn last_layer_uses_raw_attention() {
        let a = single_head(&[&[0.6, 0.4], &[0.2, 0.8]]);
        let b = single_head(&[&[0.5, 0.5], &[0.1, 0.9]]);
        let stack = AttentionStack {
            layers: vec![a.clone(), b.clone()],
        };
        let fused = fuse_stack(&stack, FusionMode::Pairwise).unwrap();
        assert_eq!(fused[1], b);
        let cumulative = fuse_stack(&stack, FusionMode::Cumulative).unwrap();
        assert_eq!(cumulative[0], fused[0]);
        assert_eq!(cumulative[1], b);
    }

    #[test]
    fn assemble_checks_layer_coverage() {
        let mut tape = Tape::new();
        let z1 = tape.constant(Tensor::zeros(&[3, 2]));
        let z2 = tape.constant(Tensor::full(&[3, 2], 1.0));
        let sel = vec![TokenSelection {
            layer: 1,
            indices: vec![1, 2],
        }];
        assert!(assemble_input(&mut tape, &[z1, z2], &sel).is_err());
        let sel2 = vec![
            sel[0].clone(),
            TokenSelection {
                layer: 2,
                indices: vec![2, 2],
            },
        ];
        let zf = assemble_input(&mut tape, &[z1, z2], &sel2).unwrap();
        assert_eq!(tape.shape(zf), &[5, 2]);
        assert_eq!(tape.value(zf).row(0), &[1.0, 1.0]);
        assert_eq!(tape.value(zf).row(1), &[0.0, 0.0]);
    }
}
