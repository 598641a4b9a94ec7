//! Loop-based reference implementations shared by the integration tests.
#![allow(dead_code)]

use candle_core::{Device, Tensor};
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

pub fn mat_tensor(m: &Mat) -> Tensor {
    let rows = m.len();
    let cols = m[0].len();
    let flat: Vec<f64> = m.iter().flatten().copied().collect();
    Tensor::from_vec(flat, (rows, cols), &Device::Cpu).unwrap()
}

pub fn vec_tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec(), v.len(), &Device::Cpu).unwrap()
}

/// Token batch `[b][token][channel]` as a `(b, tokens, channels)` tensor.
pub fn tokens_tensor(x: &[Mat]) -> Tensor {
    let (b, n, c) = (x.len(), x[0].len(), x[0][0].len());
    let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
    Tensor::from_vec(flat, (b, n, c), &Device::Cpu).unwrap()
}

pub struct OracleWeights {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub o: Mat,
    pub o_bias: Option<Vec<f64>>,
    pub heads: usize,
}

fn project(x: &[f64], w: &Mat) -> Vec<f64> {
    let out = w[0].len();
    (0..out).map(|j| x.iter().zip(w).map(|(xi, row)| xi * row[j]).sum()).collect()
}

/// Attention of every query token over `kv`, one head at a time, with plain loops.
pub fn attend_oracle(queries: &Mat, kv: &Mat, w: &OracleWeights) -> Mat {
    let d = w.q[0].len();
    let dh = d / w.heads;
    let qs: Mat = queries.iter().map(|x| project(x, &w.q)).collect();
    let ks: Mat = kv.iter().map(|x| project(x, &w.k)).collect();
    let vs: Mat = kv.iter().map(|x| project(x, &w.v)).collect();
    qs.iter()
        .map(|q| {
            let mut merged = vec![0.0; d];
            for h in 0..w.heads {
                let r = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = ks
                    .iter()
                    .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, v) in vs.iter().enumerate() {
                    for c in r.clone() {
                        merged[c] += e[j] / z * v[c];
                    }
                }
            }
            let mut out = project(&merged, &w.o);
            if let Some(b) = &w.o_bias {
                for (o, bi) in out.iter_mut().zip(b) {
                    *o += bi;
                }
            }
            out
        })
        .collect()
}

/// `z[b][view][token]`: each view's tokens attend over all views of the same batch entry.
pub fn multiview_oracle(z: &[Vec<Mat>], w: &OracleWeights) -> Vec<Vec<Mat>> {
    z.iter()
        .map(|views| {
            let all: Mat = views.iter().flatten().cloned().collect();
            views.iter().map(|v| attend_oracle(v, &all, w)).collect()
        })
        .collect()
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}
