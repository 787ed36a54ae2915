//! LSTM recurrence with backpropagation through time.
//!
//! Gate blocks are ordered `[input, forget, candidate, output]` along the
//! `4 * hidden` axis of the input kernel `W: [d][4h]`, the recurrent kernel
//! `U: [h][4h]` and the bias.

use super::layers::Param;
use super::tensor::{gemm, Scalar, Strides, Tensor};
use crate::error::{Error, Result};

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Forward result: hidden states plus everything BPTT needs.
#[derive(Debug, Clone)]
pub struct LstmTrace<F> {
    /// `(batch, steps, hidden)`.
    pub hidden: Tensor<F>,
    /// Cell states `(batch, steps, hidden)`.
    pub cell: Tensor<F>,
    /// Activated gates `(batch, steps, 4 * hidden)`.
    gates: Tensor<F>,
    h0: Vec<F>,
    c0: Vec<F>,
}

/// Runs the recurrence from the given `(h0, c0)` (each `batch * hidden`), or zeros.
pub fn lstm_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &[F],
    u: &[F],
    b: &[F],
    init: Option<(&[F], &[F])>,
) -> LstmTrace<F> {
    let [batch, steps, d] = x.shape();
    let g4 = b.len();
    let h = g4 / 4;
    let mut z = Tensor::zeros(batch, steps, g4);
    for row in z.data_mut().chunks_exact_mut(g4) {
        row.copy_from_slice(b);
    }
    gemm(batch * steps, d, g4, x.data(), Strides(d, 1), w, Strides(g4, 1), F::one(), z.data_mut(), Strides(g4, 1));

    let (h0, c0) = match init {
        Some((hh, cc)) => (hh.to_vec(), cc.to_vec()),
        None => (vec![F::zero(); batch * h], vec![F::zero(); batch * h]),
    };
    let mut hidden = Tensor::zeros(batch, steps, h);
    let mut cell = Tensor::zeros(batch, steps, h);
    let mut h_prev = h0.clone();
    let mut c_prev = c0.clone();
    for t in 0..steps {
        // z[:, t, :] += h_prev U
        let zt = &mut z.data_mut()[t * g4..];
        gemm(batch, h, g4, &h_prev, Strides(h, 1), u, Strides(g4, 1), F::one(), zt, Strides(steps * g4, 1));
        for s in 0..batch {
            let zrow = &mut z.data_mut()[(s * steps + t) * g4..][..g4];
            for j in 0..h {
                let i_g = sigmoid(zrow[j]);
                let f_g = sigmoid(zrow[h + j]);
                let c_g = zrow[2 * h + j].tanh();
                let o_g = sigmoid(zrow[3 * h + j]);
                zrow[j] = i_g;
                zrow[h + j] = f_g;
                zrow[2 * h + j] = c_g;
                zrow[3 * h + j] = o_g;
                let c = f_g * c_prev[s * h + j] + i_g * c_g;
                let hv = o_g * c.tanh();
                cell.data_mut()[(s * steps + t) * h + j] = c;
                hidden.data_mut()[(s * steps + t) * h + j] = hv;
            }
        }
        for s in 0..batch {
            h_prev[s * h..(s + 1) * h].copy_from_slice(&hidden.data()[(s * steps + t) * h..][..h]);
            c_prev[s * h..(s + 1) * h].copy_from_slice(&cell.data()[(s * steps + t) * h..][..h]);
        }
    }
    LstmTrace { hidden, cell, gates: z, h0, c0 }
}

/// Hidden states of an LSTM over `inputs` (`(batch, steps, d)`).
pub fn lstm_sequence<F: Scalar>(inputs: &Tensor<F>, w: &[F], u: &[F], b: &[F]) -> Tensor<F> {
    lstm_forward(inputs, w, u, b, None).hidden
}

#[derive(Debug, Clone)]
pub(crate) struct LstmLayer<F> {
    hidden: usize,
    cache: Option<(Tensor<F>, LstmTrace<F>)>,
}

impl<F: Scalar> LstmLayer<F> {
    pub fn new(hidden: usize) -> Self {
        Self { hidden, cache: None }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, x: &Tensor<F>, w: &[F], u: &[F], b: &[F]) -> Tensor<F> {
        let trace = lstm_forward(x, w, u, b, None);
        let out = trace.hidden.clone();
        self.cache = Some((x.clone(), trace));
        out
    }

    pub fn backward(
        &mut self,
        gout: &Tensor<F>,
        w: &mut Param<F>,
        u: &mut Param<F>,
        b: &mut Param<F>,
    ) -> Result<Tensor<F>> {
        let (x, tr) = self.cache.take().ok_or(Error::NoForwardCache)?;
        let [batch, steps, d] = x.shape();
        let h = self.hidden;
        let g4 = 4 * h;
        let one = F::one();

        let mut dz = Tensor::zeros(batch, steps, g4);
        let mut dh_next = vec![F::zero(); batch * h];
        let mut dc_next = vec![F::zero(); batch * h];
        for t in (0..steps).rev() {
            for s in 0..batch {
                let row = (s * steps + t) * g4;
                for j in 0..h {
                    let gi = tr.gates.data()[row + j];
                    let gf = tr.gates.data()[row + h + j];
                    let gg = tr.gates.data()[row + 2 * h + j];
                    let go = tr.gates.data()[row + 3 * h + j];
                    let c = tr.cell.data()[(s * steps + t) * h + j];
                    let c_prev = if t == 0 { tr.c0[s * h + j] } else { tr.cell.data()[(s * steps + t - 1) * h + j] };
                    let tc = c.tanh();
                    let dh = gout.data()[(s * steps + t) * h + j] + dh_next[s * h + j];
                    let dc = dc_next[s * h + j] + dh * go * (one - tc * tc);
                    let dzr = &mut dz.data_mut()[row..row + g4];
                    dzr[j] = dc * gg * gi * (one - gi);
                    dzr[h + j] = dc * c_prev * gf * (one - gf);
                    dzr[2 * h + j] = dc * gi * (one - gg * gg);
                    dzr[3 * h + j] = dh * tc * go * (one - go);
                    dc_next[s * h + j] = dc * gf;
                }
            }
            // dh_next = dz_t U^T
            gemm(batch, g4, h, &dz.data()[t * g4..], Strides(steps * g4, 1), &u.value, Strides(1, g4), F::zero(), &mut dh_next, Strides(h, 1));
        }

        // Previous hidden state for every step, for the recurrent kernel gradient.
        let mut h_prev = Tensor::zeros(batch, steps, h);
        for s in 0..batch {
            for t in 0..steps {
                let src = if t == 0 {
                    &tr.h0[s * h..(s + 1) * h]
                } else {
                    &tr.hidden.data()[(s * steps + t - 1) * h..][..h]
                };
                h_prev.data_mut()[(s * steps + t) * h..][..h].copy_from_slice(src);
            }
        }
        let rows = batch * steps;
        gemm(h, rows, g4, h_prev.data(), Strides(1, h), dz.data(), Strides(g4, 1), F::one(), &mut u.grad, Strides(g4, 1));
        gemm(d, rows, g4, x.data(), Strides(1, d), dz.data(), Strides(g4, 1), F::one(), &mut w.grad, Strides(g4, 1));
        for row in dz.data().chunks_exact(g4) {
            b.grad.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        let mut gin = Tensor::zeros(batch, steps, d);
        gemm(rows, g4, d, dz.data(), Strides(g4, 1), &w.value, Strides(1, g4), F::zero(), gin.data_mut(), Strides(d, 1));
        Ok(gin)
    }
}
