//! Additive attention over encoder outputs, scored from the previous
//! decoder state and the previous output token's embedding:
//! e_i = wᵀ tanh(W_a·dec_state + U_a·h_i + V_a·y_prev_emb),
//! weights = softmax(e), v_t = Σ_i weights_i · h_i.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, ParamModel, Parameter};

#[derive(Debug, Clone)]
pub struct AttentionLayer {
    attn_size: usize,
    dec_size: usize,
    enc_size: usize,
    emb_size: usize,
    w_a: Parameter,
    u_a: Parameter,
    v_a: Parameter,
    score_w: Parameter,
}

/// Forward activations cached for the backward pass.
#[derive(Debug, Clone)]
pub struct AttendCache {
    dec_state: Vec<f64>,
    y_emb: Vec<f64>,
    /// tanh outputs per encoder position.
    u: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AttentionLayer {
    pub fn new(
        prefix: &str,
        attn_size: usize,
        dec_size: usize,
        enc_size: usize,
        emb_size: usize,
        init_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let name = |n: &str| format!("{prefix}.{n}");
        AttentionLayer {
            attn_size,
            dec_size,
            enc_size,
            emb_size,
            w_a: Parameter::uniform(name("W_a"), attn_size, dec_size, init_scale, rng),
            u_a: Parameter::uniform(name("U_a"), attn_size, enc_size, init_scale, rng),
            v_a: Parameter::uniform(name("V_a"), attn_size, emb_size, init_scale, rng),
            score_w: Parameter::uniform(name("w"), attn_size, 1, init_scale, rng),
        }
    }

    pub fn attn_size(&self) -> usize {
        self.attn_size
    }

    fn check_shapes(&self, h: &[Vec<f64>], dec_state: &[f64], y_emb: &[f64]) -> Result<()> {
        if h.is_empty() {
            return Err(Error::EmptyInput("attention over empty encoder output".into()));
        }
        let ok = dec_state.len() == self.dec_size
            && y_emb.len() == self.emb_size
            && h.iter().all(|row| row.len() == self.enc_size);
        if !ok {
            return Err(Error::ShapeMismatch {
                context: "attend".into(),
                expected: format!(
                    "dec {}, emb {}, enc {}",
                    self.dec_size, self.emb_size, self.enc_size
                ),
                got: format!(
                    "dec {}, emb {}, enc {}",
                    dec_state.len(),
                    y_emb.len(),
                    h.first().map_or(0, |r| r.len())
                ),
            });
        }
        Ok(())
    }

    /// Returns (v_t, weights).
    pub fn attend(
        &self,
        h: &[Vec<f64>],
        dec_state: &[f64],
        y_emb: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (v_t, cache) = self.attend_cached(h, dec_state, y_emb)?;
        Ok((v_t, cache.weights))
    }

    pub fn attend_cached(
        &self,
        h: &[Vec<f64>],
        dec_state: &[f64],
        y_emb: &[f64],
    ) -> Result<(Vec<f64>, AttendCache)> {
        self.check_shapes(h, dec_state, y_emb)?;
        // shared term s = W_a d + V_a y
        let mut s = self.w_a.matvec(dec_state);
        nn::add_assign(&mut s, &self.v_a.matvec(y_emb));
        let mut scores = Vec::with_capacity(h.len());
        let mut u = Vec::with_capacity(h.len());
        for hi in h {
            let mut pre = self.u_a.matvec(hi);
            nn::add_assign(&mut pre, &s);
            let ui = nn::tanh_vec(&pre);
            let e: f64 = ui.iter().zip(self.score_w.value()).map(|(a, b)| a * b).sum();
            scores.push(e);
            u.push(ui);
        }
        let weights = nn::softmax(&scores)?;
        let mut v_t = vec![0.0; self.enc_size];
        for (wi, hi) in weights.iter().zip(h) {
            for (v, x) in v_t.iter_mut().zip(hi) {
                *v += wi * x;
            }
        }
        let cache = AttendCache {
            dec_state: dec_state.to_vec(),
            y_emb: y_emb.to_vec(),
            u,
            weights,
        };
        Ok((v_t, cache))
    }

    /// Backward through one attend call given dL/dv_t. Accumulates layer
    /// gradients and returns (dL/dh, dL/ddec_state, dL/dy_emb).
    pub fn backward(
        &mut self,
        cache: &AttendCache,
        h: &[Vec<f64>],
        dv_t: &[f64],
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n = h.len();
        let weights = &cache.weights;

        // v_t = Σ a_i h_i
        let mut dh: Vec<Vec<f64>> = (0..n).map(|i| nn::scale_vec(dv_t, weights[i])).collect();
        let da: Vec<f64> = h
            .iter()
            .map(|hi| hi.iter().zip(dv_t).map(|(a, b)| a * b).sum())
            .collect();

        // softmax backward
        let dot: f64 = weights.iter().zip(&da).map(|(a, b)| a * b).sum();
        let de: Vec<f64> = (0..n).map(|i| weights[i] * (da[i] - dot)).collect();

        // e_i = wᵀ u_i, u_i = tanh(pre_i)
        let mut dsum = vec![0.0; self.attn_size]; // Σ_i dpre_i (for the shared term)
        for i in 0..n {
            let ui = &cache.u[i];
            self.score_w.accumulate(&nn::scale_vec(ui, de[i]));
            let dpre: Vec<f64> = (0..self.attn_size)
                .map(|k| de[i] * self.score_w.value()[k] * (1.0 - ui[k] * ui[k]))
                .collect();
            self.u_a.accumulate_outer(&dpre, &h[i]);
            nn::add_assign(&mut dh[i], &self.u_a.matvec_transpose(&dpre));
            nn::add_assign(&mut dsum, &dpre);
        }
        self.w_a.accumulate_outer(&dsum, &cache.dec_state);
        self.v_a.accumulate_outer(&dsum, &cache.y_emb);
        let d_dec = self.w_a.matvec_transpose(&dsum);
        let d_emb = self.v_a.matvec_transpose(&dsum);
        (dh, d_dec, d_emb)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w_a, &self.u_a, &self.v_a, &self.score_w]
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl ParamModel for AttentionLayer {
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.w_a,
            &mut self.u_a,
            &mut self.v_a,
            &mut self.score_w,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::mean_pool;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn layer(rng: &mut ChaCha8Rng, a: usize, d: usize, e2h: usize, emb: usize) -> AttentionLayer {
        AttentionLayer::new("attn", a, d, e2h, emb, 0.7, rng)
    }

    #[test]
    fn singleton_attends_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = layer(&mut rng, 3, 2, 4, 2);
        let h = vec![rand_vec(&mut rng, 4)];
        let (v, w) = l
            .attend(&h, &rand_vec(&mut rng, 2), &rand_vec(&mut rng, 2))
            .unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(v, h[0]);
    }

    #[test]
    fn zero_parameters_recover_mean_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l = layer(&mut rng, 3, 2, 4, 2);
        for p in l.params_mut() {
            p.value_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let h: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 4)).collect();
        let (v, w) = l
            .attend(&h, &rand_vec(&mut rng, 2), &rand_vec(&mut rng, 2))
            .unwrap();
        for wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
        let m = mean_pool(&h).unwrap();
        for i in 0..4 {
            assert!((v[i] - m[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_straight_line_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = layer(&mut rng, 2, 3, 4, 2);
        let h: Vec<Vec<f64>> = (0..2).map(|_| rand_vec(&mut rng, 4)).collect();
        let d = rand_vec(&mut rng, 3);
        let y = rand_vec(&mut rng, 2);
        let (v, w) = l.attend(&h, &d, &y).unwrap();

        // independent scalar-by-scalar re-evaluation
        let mv = |m: &Parameter, x: &[f64]| -> Vec<f64> {
            (0..m.rows())
                .map(|i| (0..x.len()).map(|j| m.value()[i * x.len() + j] * x[j]).sum())
                .collect()
        };
        let wa_d = mv(&l.w_a, &d);
        let va_y = mv(&l.v_a, &y);
        let mut es = Vec::new();
        for hi in &h {
            let ua_h = mv(&l.u_a, hi);
            let mut e = 0.0;
            for k in 0..2 {
                e += l.score_w.value()[k] * (wa_d[k] + ua_h[k] + va_y[k]).tanh();
            }
            es.push(e);
        }
        let m = es.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = es.iter().map(|e| (e - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let expect_w: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let mut expect_v = vec![0.0; 4];
        for i in 0..2 {
            for k in 0..4 {
                expect_v[k] += expect_w[i] * h[i][k];
            }
        }
        for i in 0..2 {
            assert!((w[i] - expect_w[i]).abs() < 1e-12);
        }
        for k in 0..4 {
            assert!((v[k] - expect_v[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_probabilities_and_v_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let l = layer(&mut rng, 3, 2, 3, 2);
            let n = rng.gen_range(1..6);
            let h: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut rng, 3)).collect();
            let (v, w) = l
                .attend(&h, &rand_vec(&mut rng, 2), &rand_vec(&mut rng, 2))
                .unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
            for k in 0..3 {
                let lo = h.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
                let hi = h.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                assert!(v[k] >= lo - 1e-12 && v[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = layer(&mut rng, 2, 2, 3, 2);
        assert!(l.attend(&[], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(l.attend(&[vec![0.0; 3]], &[0.0; 1], &[0.0; 2]).is_err());
        assert!(l.attend(&[vec![0.0; 2]], &[0.0; 2], &[0.0; 2]).is_err());
    }

    struct AttnLossModel {
        layer: AttentionLayer,
        h: Vec<Vec<f64>>,
        dec: Vec<f64>,
        emb: Vec<f64>,
        target: Vec<f64>,
    }

    impl ParamModel for AttnLossModel {
        fn params_mut(&mut self) -> Vec<&mut Parameter> {
            self.layer.params_mut()
        }
    }

    #[test]
    fn grad_check_layer_params() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let (a, d, e2h, emb) = (3, 2, 4, 2);
            let n = rng.gen_range(1..5);
            let mut model = AttnLossModel {
                layer: layer(&mut rng, a, d, e2h, emb),
                h: (0..n).map(|_| rand_vec(&mut rng, e2h)).collect(),
                dec: rand_vec(&mut rng, d),
                emb: rand_vec(&mut rng, emb),
                target: rand_vec(&mut rng, e2h),
            };
            let report = grad_check(
                &mut model,
                |m| {
                    let (v, cache) = m.layer.attend_cached(&m.h, &m.dec, &m.emb)?;
                    let diff: Vec<f64> = v.iter().zip(&m.target).map(|(a, b)| a - b).collect();
                    let loss = 0.5 * diff.iter().map(|x| x * x).sum::<f64>();
                    m.layer.backward(&cache, &m.h, &diff);
                    Ok(loss)
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_err);
        }
    }

    // Gradients w.r.t. the inputs (h, dec_state, y_emb), checked by hosting
    // them in parameters of a wrapper model.
    struct AttnInputModel {
        layer: AttentionLayer,
        h: Vec<Parameter>,
        dec: Parameter,
        emb: Parameter,
        target: Vec<f64>,
    }

    impl ParamModel for AttnInputModel {
        fn params_mut(&mut self) -> Vec<&mut Parameter> {
            let mut ps: Vec<&mut Parameter> = self.h.iter_mut().collect();
            ps.push(&mut self.dec);
            ps.push(&mut self.emb);
            ps
        }
    }

    #[test]
    fn grad_check_inputs() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let (a, d, e2h, emb) = (2, 3, 3, 2);
            let n = rng.gen_range(1..4);
            let mut model = AttnInputModel {
                layer: layer(&mut rng, a, d, e2h, emb),
                h: (0..n)
                    .map(|i| {
                        Parameter::from_values(format!("h{i}"), e2h, 1, rand_vec(&mut rng, e2h))
                            .unwrap()
                    })
                    .collect(),
                dec: Parameter::from_values("dec", d, 1, rand_vec(&mut rng, d)).unwrap(),
                emb: Parameter::from_values("emb", emb, 1, rand_vec(&mut rng, emb)).unwrap(),
                target: rand_vec(&mut rng, e2h),
            };
            let report = grad_check(
                &mut model,
                |m| {
                    let h: Vec<Vec<f64>> = m.h.iter().map(|p| p.value().to_vec()).collect();
                    let (v, cache) =
                        m.layer
                            .attend_cached(&h, m.dec.value(), m.emb.value())?;
                    let diff: Vec<f64> = v.iter().zip(&m.target).map(|(a, b)| a - b).collect();
                    let loss = 0.5 * diff.iter().map(|x| x * x).sum::<f64>();
                    let (dh, ddec, demb) = m.layer.backward(&cache, &h, &diff);
                    for (p, g) in m.h.iter_mut().zip(&dh) {
                        p.accumulate(g);
                    }
                    m.dec.accumulate(&ddec);
                    m.emb.accumulate(&demb);
                    Ok(loss)
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_err);
        }
    }
}
