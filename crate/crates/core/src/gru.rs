//! GRU cell, sequence runner, bidirectional encoder, and mean pooling,
//! with hand-derived backward passes.
//!
//! Gates: z_t = σ(W_z x_t + U_z h_{t-1} + b_z), r_t likewise; candidate
//! ĥ_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h); output
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ ĥ_t. Biases are optional so the
//! bias-free formulation can be reproduced exactly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, ParamModel, Parameter};

#[derive(Debug, Clone)]
pub struct GruCell {
    input_size: usize,
    hidden_size: usize,
    w_z: Parameter,
    u_z: Parameter,
    w_r: Parameter,
    u_r: Parameter,
    w_h: Parameter,
    u_h: Parameter,
    b_z: Parameter,
    b_r: Parameter,
    b_h: Parameter,
    use_bias: bool,
}

/// Activations cached by a forward step, consumed by the backward step.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    hc: Vec<f64>,
}

impl GruCell {
    pub fn new(
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        use_bias: bool,
        init_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let name = |n: &str| format!("{prefix}.{n}");
        GruCell {
            input_size,
            hidden_size,
            w_z: Parameter::uniform(name("W_z"), hidden_size, input_size, init_scale, rng),
            u_z: Parameter::uniform(name("U_z"), hidden_size, hidden_size, init_scale, rng),
            w_r: Parameter::uniform(name("W_r"), hidden_size, input_size, init_scale, rng),
            u_r: Parameter::uniform(name("U_r"), hidden_size, hidden_size, init_scale, rng),
            w_h: Parameter::uniform(name("W_h"), hidden_size, input_size, init_scale, rng),
            u_h: Parameter::uniform(name("U_h"), hidden_size, hidden_size, init_scale, rng),
            b_z: Parameter::zeros(name("b_z"), hidden_size, 1),
            b_r: Parameter::zeros(name("b_r"), hidden_size, 1),
            b_h: Parameter::zeros(name("b_h"), hidden_size, 1),
            use_bias,
        }
    }

    pub fn zeros(prefix: &str, input_size: usize, hidden_size: usize, use_bias: bool) -> Self {
        let name = |n: &str| format!("{prefix}.{n}");
        GruCell {
            input_size,
            hidden_size,
            w_z: Parameter::zeros(name("W_z"), hidden_size, input_size),
            u_z: Parameter::zeros(name("U_z"), hidden_size, hidden_size),
            w_r: Parameter::zeros(name("W_r"), hidden_size, input_size),
            u_r: Parameter::zeros(name("U_r"), hidden_size, hidden_size),
            w_h: Parameter::zeros(name("W_h"), hidden_size, input_size),
            u_h: Parameter::zeros(name("U_h"), hidden_size, hidden_size),
            b_z: Parameter::zeros(name("b_z"), hidden_size, 1),
            b_r: Parameter::zeros(name("b_r"), hidden_size, 1),
            b_h: Parameter::zeros(name("b_h"), hidden_size, 1),
            use_bias,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    fn check_shapes(&self, x: &[f64], h_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_size || h_prev.len() != self.hidden_size {
            return Err(Error::ShapeMismatch {
                context: format!("gru step on {}", self.w_z.name()),
                expected: format!("input {}, hidden {}", self.input_size, self.hidden_size),
                got: format!("input {}, hidden {}", x.len(), h_prev.len()),
            });
        }
        Ok(())
    }

    /// One GRU step; returns h_t.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(x, h_prev)?;
        let (h, _) = self.step_unchecked(x, h_prev);
        Ok(h)
    }

    pub fn step_cached(&self, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache)> {
        self.check_shapes(x, h_prev)?;
        Ok(self.step_unchecked(x, h_prev))
    }

    fn step_unchecked(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruStepCache) {
        let mut az = self.w_z.matvec(x);
        nn::add_assign(&mut az, &self.u_z.matvec(h_prev));
        let mut ar = self.w_r.matvec(x);
        nn::add_assign(&mut ar, &self.u_r.matvec(h_prev));
        if self.use_bias {
            nn::add_assign(&mut az, self.b_z.value());
            nn::add_assign(&mut ar, self.b_r.value());
        }
        let z = nn::sigmoid(&az);
        let r = nn::sigmoid(&ar);
        let rh = nn::hadamard(&r, h_prev);
        let mut ah = self.w_h.matvec(x);
        nn::add_assign(&mut ah, &self.u_h.matvec(&rh));
        if self.use_bias {
            nn::add_assign(&mut ah, self.b_h.value());
        }
        let hc = nn::tanh_vec(&ah);
        let h: Vec<f64> = (0..self.hidden_size)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * hc[i])
            .collect();
        let cache = GruStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            hc,
        };
        (h, cache)
    }

    /// Backward through one step. Accumulates parameter gradients and
    /// returns (dL/dx, dL/dh_prev) given dL/dh_t.
    pub fn backward_step(&mut self, cache: &GruStepCache, dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden_size;
        debug_assert_eq!(dh.len(), n);
        let GruStepCache { x, h_prev, z, r, hc } = cache;

        let mut dh_prev: Vec<f64> = (0..n).map(|i| dh[i] * (1.0 - z[i])).collect();
        let dz: Vec<f64> = (0..n).map(|i| dh[i] * (hc[i] - h_prev[i])).collect();
        let dhc: Vec<f64> = (0..n).map(|i| dh[i] * z[i]).collect();

        // candidate branch
        let dah: Vec<f64> = (0..n).map(|i| dhc[i] * (1.0 - hc[i] * hc[i])).collect();
        self.w_h.accumulate_outer(&dah, x);
        let rh = nn::hadamard(r, h_prev);
        self.u_h.accumulate_outer(&dah, &rh);
        self.b_h.accumulate(&dah);
        let drh = self.u_h.matvec_transpose(&dah);
        let dr: Vec<f64> = (0..n).map(|i| drh[i] * h_prev[i]).collect();
        for i in 0..n {
            dh_prev[i] += drh[i] * r[i];
        }

        // reset gate
        let dar: Vec<f64> = (0..n).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();
        self.w_r.accumulate_outer(&dar, x);
        self.u_r.accumulate_outer(&dar, h_prev);
        self.b_r.accumulate(&dar);
        nn::add_assign(&mut dh_prev, &self.u_r.matvec_transpose(&dar));

        // update gate
        let daz: Vec<f64> = (0..n).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
        self.w_z.accumulate_outer(&daz, x);
        self.u_z.accumulate_outer(&daz, h_prev);
        self.b_z.accumulate(&daz);
        nn::add_assign(&mut dh_prev, &self.u_z.matvec_transpose(&daz));

        let mut dx = self.w_h.matvec_transpose(&dah);
        nn::add_assign(&mut dx, &self.w_r.matvec_transpose(&dar));
        nn::add_assign(&mut dx, &self.w_z.matvec_transpose(&daz));

        (dx, dh_prev)
    }

    /// Runs the cell over a sequence from h0 (zeros when None).
    pub fn run_sequence(&self, xs: &[Vec<f64>], h0: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        Ok(self.run_sequence_cached(xs, h0)?.0)
    }

    pub fn run_sequence_cached(
        &self,
        xs: &[Vec<f64>],
        h0: Option<&[f64]>,
    ) -> Result<(Vec<Vec<f64>>, Vec<GruStepCache>)> {
        let zero_h0;
        let mut h = match h0 {
            Some(h0) => h0,
            None => {
                zero_h0 = vec![0.0; self.hidden_size];
                &zero_h0
            }
        }
        .to_vec();
        let mut outputs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step_cached(x, &h)?;
            outputs.push(next.clone());
            caches.push(cache);
            h = next;
        }
        Ok((outputs, caches))
    }

    /// Backpropagation through time over a cached sequence run.
    /// `dhs[t]` is the loss gradient arriving at output h_t from outside.
    /// Returns per-step input gradients and dL/dh0.
    pub fn backward_sequence(
        &mut self,
        caches: &[GruStepCache],
        dhs: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        debug_assert_eq!(caches.len(), dhs.len());
        let mut dxs = vec![Vec::new(); caches.len()];
        let mut carry = vec![0.0; self.hidden_size];
        for t in (0..caches.len()).rev() {
            let mut dh = dhs[t].clone();
            nn::add_assign(&mut dh, &carry);
            let (dx, dh_prev) = self.backward_step(&caches[t], &dh);
            dxs[t] = dx;
            carry = dh_prev;
        }
        (dxs, carry)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut ps = vec![
            &self.w_z, &self.u_z, &self.w_r, &self.u_r, &self.w_h, &self.u_h,
        ];
        if self.use_bias {
            ps.extend([&self.b_z, &self.b_r, &self.b_h]);
        }
        ps
    }

    /// Every tensor including disabled biases, for serialization.
    pub(crate) fn params_all(&self) -> Vec<&Parameter> {
        vec![
            &self.w_z, &self.u_z, &self.w_r, &self.u_r, &self.w_h, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ]
    }

    pub(crate) fn params_all_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.w_z,
            &mut self.u_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_all_mut() {
            p.zero_grad();
        }
    }
}

impl ParamModel for GruCell {
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let use_bias = self.use_bias;
        let mut ps = vec![
            &mut self.w_z,
            &mut self.u_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.w_h,
            &mut self.u_h,
        ];
        if use_bias {
            ps.extend([&mut self.b_z, &mut self.b_r, &mut self.b_h]);
        }
        ps
    }
}

/// Bidirectional encoder outputs: per-position concatenated states and
/// their mean, plus the caches needed for backward.
#[derive(Debug, Clone)]
pub struct EncoderOutputs {
    /// h_t = h_t^(f) ⊕ h_t^(b), one 2H-vector per input position.
    pub h: Vec<Vec<f64>>,
    /// Mean of the h_t.
    pub v: Vec<f64>,
    fwd_caches: Vec<GruStepCache>,
    bwd_caches: Vec<GruStepCache>,
}

/// Arithmetic mean of a nonempty list of same-length vectors.
pub fn mean_pool(h: &[Vec<f64>]) -> Result<Vec<f64>> {
    if h.is_empty() {
        return Err(Error::EmptyInput("mean_pool of empty sequence".into()));
    }
    let dim = h[0].len();
    let mut v = vec![0.0; dim];
    for row in h {
        if row.len() != dim {
            return Err(Error::ShapeMismatch {
                context: "mean_pool".into(),
                expected: format!("{dim}"),
                got: format!("{}", row.len()),
            });
        }
        nn::add_assign(&mut v, row);
    }
    let inv = 1.0 / h.len() as f64;
    v.iter_mut().for_each(|x| *x *= inv);
    Ok(v)
}

/// Runs the forward cell over xs and the backward cell over reversed xs,
/// concatenates per position, and mean-pools.
pub fn encode_bidirectional(
    fwd: &GruCell,
    bwd: &GruCell,
    xs: &[Vec<f64>],
) -> Result<EncoderOutputs> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("encoder input".into()));
    }
    if fwd.input_size() != bwd.input_size() || fwd.hidden_size() != bwd.hidden_size() {
        return Err(Error::ShapeMismatch {
            context: "encode_bidirectional".into(),
            expected: format!("fwd {}x{}", fwd.input_size(), fwd.hidden_size()),
            got: format!("bwd {}x{}", bwd.input_size(), bwd.hidden_size()),
        });
    }
    let (hf, fwd_caches) = fwd.run_sequence_cached(xs, None)?;
    let reversed: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let (hb_rev, bwd_caches) = bwd.run_sequence_cached(&reversed, None)?;
    let n = xs.len();
    let h: Vec<Vec<f64>> = (0..n)
        .map(|t| nn::concat(&hf[t], &hb_rev[n - 1 - t]))
        .collect();
    let v = mean_pool(&h)?;
    Ok(EncoderOutputs {
        h,
        v,
        fwd_caches,
        bwd_caches,
    })
}

/// Backward through the bidirectional encoder. `dh[t]` is the gradient on
/// the concatenated h_t; `dv` the gradient on the pooled vector. Returns
/// gradients on the input embeddings.
pub fn encoder_backward(
    fwd: &mut GruCell,
    bwd: &mut GruCell,
    enc: &EncoderOutputs,
    dh: &[Vec<f64>],
    dv: &[f64],
) -> Vec<Vec<f64>> {
    let n = enc.h.len();
    let hsize = fwd.hidden_size();
    debug_assert_eq!(dh.len(), n);
    let inv = 1.0 / n as f64;
    // split each position's gradient into forward/backward halves,
    // folding in the mean-pool contribution
    let mut dfwd = vec![vec![0.0; hsize]; n];
    let mut dbwd_rev = vec![vec![0.0; hsize]; n];
    for t in 0..n {
        for i in 0..hsize {
            dfwd[t][i] = dh[t][i] + dv[i] * inv;
        }
        for i in 0..hsize {
            dbwd_rev[n - 1 - t][i] = dh[t][hsize + i] + dv[hsize + i] * inv;
        }
    }
    let (dxs_fwd, _) = fwd.backward_sequence(&enc.fwd_caches, &dfwd);
    let (dxs_bwd_rev, _) = bwd.backward_sequence(&enc.bwd_caches, &dbwd_rev);
    (0..n)
        .map(|t| nn::add_vec(&dxs_fwd[t], &dxs_bwd_rev[n - 1 - t]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_halve_previous_state() {
        let cell = GruCell::zeros("t", 1, 1, true);
        let h = cell.step(&[0.7], &[1.0]).unwrap();
        // z = r = sigmoid(0) = 0.5, candidate = tanh(0) = 0, so h = 0.5 * h_prev
        assert!((h[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut cell = GruCell::zeros("t", 1, 1, true);
        // b_z = -1e3 pushes z to 0; everything else zero
        cell.b_z.value_mut()[0] = -1e3;
        let h = cell.step(&[0.3], &[0.8]).unwrap();
        assert!((h[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn step_matches_straight_line_equations() {
        // independent re-evaluation of the four equations on a random 3x3 cell
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = GruCell::new("t", 3, 3, true, 0.8, &mut rng);
        let x = rand_vec(&mut rng, 3);
        let h_prev = rand_vec(&mut rng, 3);
        let h = cell.step(&x, &h_prev).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mv = |m: &Parameter, v: &[f64], i: usize| -> f64 {
            (0..v.len()).map(|j| m.value()[i * v.len() + j] * v[j]).sum()
        };
        for i in 0..3 {
            let z = sig(mv(&cell.w_z, &x, i) + mv(&cell.u_z, &h_prev, i) + cell.b_z.value()[i]);
            let r_full: Vec<f64> = (0..3)
                .map(|k| {
                    sig(mv(&cell.w_r, &x, k) + mv(&cell.u_r, &h_prev, k) + cell.b_r.value()[k])
                })
                .collect();
            let rh: Vec<f64> = (0..3).map(|k| r_full[k] * h_prev[k]).collect();
            let hc = (mv(&cell.w_h, &x, i) + mv(&cell.u_h, &rh, i) + cell.b_h.value()[i]).tanh();
            let expect = (1.0 - z) * h_prev[i] + z * hc;
            assert!((h[i] - expect).abs() < 1e-12, "component {i}");
        }
    }

    #[test]
    fn step_rejects_shape_mismatch() {
        let cell = GruCell::zeros("t", 2, 3, true);
        assert!(cell.step(&[1.0], &[0.0; 3]).is_err());
        assert!(cell.step(&[1.0, 2.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn gate_ranges_and_convex_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let cell = GruCell::new("t", 4, 4, true, 2.0, &mut rng);
            let x = rand_vec(&mut rng, 4);
            let h_prev = rand_vec(&mut rng, 4);
            let (h, cache) = cell.step_cached(&x, &h_prev).unwrap();
            for i in 0..4 {
                assert!(cache.z[i] > 0.0 && cache.z[i] < 1.0);
                assert!(cache.r[i] > 0.0 && cache.r[i] < 1.0);
                assert!(cache.hc[i] > -1.0 && cache.hc[i] < 1.0);
                assert!(h[i].abs() <= h_prev[i].abs().max(1.0) + 1e-12);
            }
        }
    }

    #[test]
    fn run_sequence_folds_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cell = GruCell::new("t", 2, 3, true, 0.5, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 2)).collect();
        let outs = cell.run_sequence(&xs, None).unwrap();
        let mut h = vec![0.0; 3];
        for (t, x) in xs.iter().enumerate() {
            h = cell.step(x, &h).unwrap();
            assert_eq!(outs[t], h);
        }
        assert!(cell.run_sequence(&[], None).unwrap().is_empty());
    }

    #[test]
    fn run_sequence_zero_weight_halving() {
        let cell = GruCell::zeros("t", 1, 1, true);
        let xs = vec![vec![0.0], vec![0.0], vec![0.0]];
        let outs = cell.run_sequence(&xs, Some(&[1.0])).unwrap();
        let flat: Vec<f64> = outs.into_iter().map(|h| h[0]).collect();
        assert_eq!(flat, vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn mean_pool_cases() {
        assert_eq!(mean_pool(&[vec![1.0], vec![3.0]]).unwrap(), vec![2.0]);
        assert_eq!(mean_pool(&[vec![5.0, -1.0]]).unwrap(), vec![5.0, -1.0]);
        assert!(mean_pool(&[]).is_err());
        // linearity under scaling
        let h = vec![vec![1.0, 2.0], vec![3.0, 5.0]];
        let scaled: Vec<Vec<f64>> = h.iter().map(|r| nn::scale_vec(r, 2.5)).collect();
        let m = mean_pool(&h).unwrap();
        let ms = mean_pool(&scaled).unwrap();
        for i in 0..2 {
            assert!((ms[i] - 2.5 * m[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bidirectional_matches_eq_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let fwd = GruCell::new("f", 2, 2, true, 0.6, &mut rng);
        let bwd = GruCell::new("b", 2, 2, true, 0.6, &mut rng);

        // single position: both directions see the same x_1
        let x1 = rand_vec(&mut rng, 2);
        let enc = encode_bidirectional(&fwd, &bwd, &[x1.clone()]).unwrap();
        let f = fwd.step(&x1, &[0.0, 0.0]).unwrap();
        let b = bwd.step(&x1, &[0.0, 0.0]).unwrap();
        assert_eq!(enc.h[0], nn::concat(&f, &b));
        assert_eq!(enc.v, enc.h[0]);

        assert!(encode_bidirectional(&fwd, &bwd, &[]).is_err());
    }

    #[test]
    fn shared_weights_direction_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cell = GruCell::new("s", 2, 3, true, 0.6, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, 2)).collect();
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        // with identical parameters, forward over reversed input equals
        // the reverse of the backward direction's outputs
        let enc = encode_bidirectional(&cell, &cell, &xs).unwrap();
        let hf_on_rev = cell.run_sequence(&rev, None).unwrap();
        for t in 0..xs.len() {
            let bwd_part = &enc.h[t][3..];
            let expect = &hf_on_rev[xs.len() - 1 - t];
            for i in 0..3 {
                assert!((bwd_part[i] - expect[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn v_equals_mean_of_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fwd = GruCell::new("f", 3, 4, true, 0.5, &mut rng);
        let bwd = GruCell::new("b", 3, 4, true, 0.5, &mut rng);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| rand_vec(&mut rng, 3)).collect();
        let enc = encode_bidirectional(&fwd, &bwd, &xs).unwrap();
        let m = mean_pool(&enc.h).unwrap();
        for i in 0..8 {
            assert!((enc.v[i] - m[i]).abs() < 1e-12);
        }
    }

    // gradient checks ------------------------------------------------------

    struct StepLossModel {
        cell: GruCell,
        x: Vec<f64>,
        h_prev: Vec<f64>,
        target: Vec<f64>,
    }

    impl ParamModel for StepLossModel {
        fn params_mut(&mut self) -> Vec<&mut Parameter> {
            self.cell.params_mut()
        }
    }

    #[test]
    fn grad_check_single_step() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sizes = [2usize, 3, 5, 8];
            let i = sizes[rng.gen_range(0..sizes.len())];
            let h = sizes[rng.gen_range(0..sizes.len())];
            let mut model = StepLossModel {
                cell: GruCell::new("c", i, h, true, 0.7, &mut rng),
                x: rand_vec(&mut rng, i),
                h_prev: rand_vec(&mut rng, h),
                target: rand_vec(&mut rng, h),
            };
            let report = grad_check(
                &mut model,
                |m| {
                    let (out, cache) = m.cell.step_cached(&m.x, &m.h_prev)?;
                    let diff: Vec<f64> =
                        out.iter().zip(&m.target).map(|(a, b)| a - b).collect();
                    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                    m.cell.backward_step(&cache, &diff);
                    Ok(loss)
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(
                report.passed(),
                "seed {seed}: max rel err {} at {}[{}]",
                report.max_rel_err,
                report.worst_param,
                report.worst_index
            );
        }
    }

    struct SeqLossModel {
        cell: GruCell,
        xs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    }

    impl ParamModel for SeqLossModel {
        fn params_mut(&mut self) -> Vec<&mut Parameter> {
            self.cell.params_mut()
        }
    }

    #[test]
    fn grad_check_bptt() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let sizes = [2usize, 3, 5, 8];
            let i = sizes[rng.gen_range(0..sizes.len())];
            let h = sizes[rng.gen_range(0..sizes.len())];
            let len = 6;
            let mut model = SeqLossModel {
                cell: GruCell::new("c", i, h, seed % 2 == 0, 0.7, &mut rng),
                xs: (0..len).map(|_| rand_vec(&mut rng, i)).collect(),
                targets: (0..len).map(|_| rand_vec(&mut rng, h)).collect(),
            };
            let report = grad_check(
                &mut model,
                |m| {
                    let (outs, caches) = m.cell.run_sequence_cached(&m.xs, None)?;
                    let mut loss = 0.0;
                    let mut dhs = Vec::with_capacity(outs.len());
                    for (out, target) in outs.iter().zip(&m.targets) {
                        let diff: Vec<f64> =
                            out.iter().zip(target).map(|(a, b)| a - b).collect();
                        loss += 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                        dhs.push(diff);
                    }
                    m.cell.backward_sequence(&caches, &dhs);
                    Ok(loss)
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_err);
        }
    }

    struct EncLossModel {
        fwd: GruCell,
        bwd: GruCell,
        xs: Vec<Vec<f64>>,
        th: Vec<Vec<f64>>,
        tv: Vec<f64>,
    }

    impl ParamModel for EncLossModel {
        fn params_mut(&mut self) -> Vec<&mut Parameter> {
            let mut ps = self.fwd.params_mut();
            ps.extend(self.bwd.params_mut());
            ps
        }
    }

    #[test]
    fn grad_check_bidirectional_encoder() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let sizes = [2usize, 3, 5];
            let i = sizes[rng.gen_range(0..sizes.len())];
            let h = sizes[rng.gen_range(0..sizes.len())];
            let len = rng.gen_range(1..5);
            let mut model = EncLossModel {
                fwd: GruCell::new("f", i, h, true, 0.7, &mut rng),
                bwd: GruCell::new("b", i, h, true, 0.7, &mut rng),
                xs: (0..len).map(|_| rand_vec(&mut rng, i)).collect(),
                th: (0..len).map(|_| rand_vec(&mut rng, 2 * h)).collect(),
                tv: rand_vec(&mut rng, 2 * h),
            };
            let report = grad_check(
                &mut model,
                |m| {
                    let enc = encode_bidirectional(&m.fwd, &m.bwd, &m.xs)?;
                    let mut loss = 0.0;
                    let mut dh = Vec::with_capacity(enc.h.len());
                    for (row, t) in enc.h.iter().zip(&m.th) {
                        let diff: Vec<f64> = row.iter().zip(t).map(|(a, b)| a - b).collect();
                        loss += 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                        dh.push(diff);
                    }
                    let dv: Vec<f64> = enc.v.iter().zip(&m.tv).map(|(a, b)| a - b).collect();
                    loss += 0.5 * dv.iter().map(|d| d * d).sum::<f64>();
                    encoder_backward(&mut m.fwd, &mut m.bwd, &enc, &dh, &dv);
                    Ok(loss)
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_err);
        }
    }
}
