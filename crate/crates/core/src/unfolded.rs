//! Unfolded encoders: LISTA (soft thresholding) and LeSITA (side-information
//! operator), with weights tied across stages, plus the linear decoder.
//!
//! Stage 1 computes `prox(W z)`, i.e. the recurrence started from a zero
//! code, so an encoder built by [`analytic_lista`] / [`analytic_lesita`]
//! reproduces the corresponding solver iterations exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffengine::{Graph, Model, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::proximal::{shrink, LesitaBranch};
use crate::solvers::{lipschitz, Dictionary, POWER_MAX_ITERS, POWER_TOL};
use crate::tensor::{Real, Tensor};

pub const INIT_STD: f64 = 0.1;
pub const INIT_THRESHOLD: f64 = 0.15;
pub const DEFAULT_STAGES: usize = 3;
pub const MAX_STAGES: usize = 50;

fn check_stages(stages: usize) -> Result<()> {
    if stages == 0 || stages > MAX_STAGES {
        return Err(Error::InvalidParameter(format!(
            "stage count must be in 1..={MAX_STAGES}, got {stages}"
        )));
    }
    Ok(())
}

fn check_threshold<F: Real>(name: &str, v: F) -> Result<()> {
    if !(v >= F::zero()) {
        return Err(Error::InvalidParameter(format!("{name} must be >= 0")));
    }
    Ok(())
}

fn check_square_pair<F: Real>(input_map: &Tensor<F>, recur: &Tensor<F>) -> Result<(usize, usize)> {
    let (code, feat) = input_map.dims2()?;
    let (r, c) = recur.dims2()?;
    if r != code || c != code {
        return Err(Error::Shape(format!(
            "recurrent matrix must be {code}x{code}, got {r}x{c}"
        )));
    }
    Ok((code, feat))
}

/// `alpha <- soft(S alpha + W z, gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ListaEncoderParams<F> {
    w: Tensor<F>,
    s: Tensor<F>,
    gamma: F,
    stages: usize,
}

impl<F: Real> ListaEncoderParams<F> {
    pub fn new(w: Tensor<F>, s: Tensor<F>, gamma: F, stages: usize) -> Result<Self> {
        check_square_pair(&w, &s)?;
        check_threshold("gamma", gamma)?;
        check_stages(stages)?;
        Ok(Self { w, s, gamma, stages })
    }

    pub fn w(&self) -> &Tensor<F> {
        &self.w
    }

    pub fn s(&self) -> &Tensor<F> {
        &self.s
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn n_code(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn n_feat(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn insert_into(&self, store: &mut ParamStore<F>, prefix: &str) -> Result<()> {
        store.insert(&format!("{prefix}.W"), self.w.clone(), false)?;
        store.insert(&format!("{prefix}.S"), self.s.clone(), false)?;
        store.insert(&format!("{prefix}.gamma"), Tensor::scalar(self.gamma), true)
    }

    pub fn from_store(store: &ParamStore<F>, prefix: &str, stages: usize) -> Result<Self> {
        Self::new(
            store.value(&format!("{prefix}.W"))?.clone(),
            store.value(&format!("{prefix}.S"))?.clone(),
            store.value(&format!("{prefix}.gamma"))?.item(),
            stages,
        )
    }
}

/// `alpha <- xi_mu(Q alpha + R y; side)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LesitaEncoderParams<F> {
    r: Tensor<F>,
    q: Tensor<F>,
    mu: F,
    stages: usize,
}

impl<F: Real> LesitaEncoderParams<F> {
    pub fn new(r: Tensor<F>, q: Tensor<F>, mu: F, stages: usize) -> Result<Self> {
        check_square_pair(&r, &q)?;
        check_threshold("mu", mu)?;
        check_stages(stages)?;
        Ok(Self { r, q, mu, stages })
    }

    pub fn r(&self) -> &Tensor<F> {
        &self.r
    }

    pub fn q(&self) -> &Tensor<F> {
        &self.q
    }

    pub fn mu(&self) -> F {
        self.mu
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn n_code(&self) -> usize {
        self.r.shape()[0]
    }

    pub fn n_feat(&self) -> usize {
        self.r.shape()[1]
    }

    pub fn insert_into(&self, store: &mut ParamStore<F>, prefix: &str) -> Result<()> {
        store.insert(&format!("{prefix}.R"), self.r.clone(), false)?;
        store.insert(&format!("{prefix}.Q"), self.q.clone(), false)?;
        store.insert(&format!("{prefix}.mu"), Tensor::scalar(self.mu), true)
    }

    pub fn from_store(store: &ParamStore<F>, prefix: &str, stages: usize) -> Result<Self> {
        Self::new(
            store.value(&format!("{prefix}.R"))?.clone(),
            store.value(&format!("{prefix}.Q"))?.clone(),
            store.value(&format!("{prefix}.mu"))?.item(),
            stages,
        )
    }
}

/// `x = Dx alpha`, with `Dx` stored as `(n_out, n_code)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoderParams<F> {
    dx: Tensor<F>,
}

impl<F: Real> LinearDecoderParams<F> {
    pub fn new(dx: Tensor<F>) -> Result<Self> {
        dx.dims2()?;
        Ok(Self { dx })
    }

    /// Builds from a `(n_code, n_out)` matrix, the orientation in which
    /// decoders are often tabulated.
    pub fn from_code_major(t: &Tensor<F>) -> Result<Self> {
        Self::new(t.transpose()?)
    }

    pub fn dx(&self) -> &Tensor<F> {
        &self.dx
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn add_into<F: Real>(a: &mut [F], b: &[F]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = *x + y;
    }
}

pub fn lista_forward<F: Real>(params: &ListaEncoderParams<F>, z: &[F]) -> Result<Vec<F>> {
    check_len("feature vector", z.len(), params.n_feat())?;
    let wz = params.w.matvec(z)?;
    let g = params.gamma;
    let mut code: Vec<F> = wz.iter().map(|&u| shrink(u, g)).collect();
    for _ in 1..params.stages {
        let mut pre = params.s.matvec(&code)?;
        add_into(&mut pre, &wz);
        code = pre.into_iter().map(|u| shrink(u, g)).collect();
    }
    Ok(code)
}

pub fn lesita_forward<F: Real>(params: &LesitaEncoderParams<F>, y_feat: &[F], side_code: &[F]) -> Result<Vec<F>> {
    check_len("feature vector", y_feat.len(), params.n_feat())?;
    check_len("side code", side_code.len(), params.n_code())?;
    let ry = params.r.matvec(y_feat)?;
    let mu = params.mu;
    let prox = |u: F, s: F| LesitaBranch::select(u, s, mu).value(u, s, mu);
    let mut code: Vec<F> = ry.iter().zip(side_code).map(|(&u, &s)| prox(u, s)).collect();
    for _ in 1..params.stages {
        let mut pre = params.q.matvec(&code)?;
        add_into(&mut pre, &ry);
        code = pre.into_iter().zip(side_code).map(|(u, &s)| prox(u, s)).collect();
    }
    Ok(code)
}

pub fn decode<F: Real>(params: &LinearDecoderParams<F>, code: &[F]) -> Result<Vec<F>> {
    params.dx.matvec(code)
}

/// `(W, S)` = `(D^T / L, I - D^T D / L)` and the threshold `lambda / L`.
fn analytic_parts(dict: &Dictionary, lambda: f64) -> Result<(Tensor<f64>, Tensor<f64>, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    let l = lipschitz(dict, POWER_TOL, POWER_MAX_ITERS)?.value;
    let inv_l = 1.0 / l;
    let dt = dict.matrix().transpose()?;
    let w = Tensor::from_vec(dt.shape(), dt.data().iter().map(|v| v * inv_l).collect())?;
    let gram = dict.gram();
    let n = dict.n_alpha();
    let mut s = Tensor::identity(n);
    for (o, g) in s.data_mut().iter_mut().zip(gram.data()) {
        *o -= inv_l * g;
    }
    Ok((w, s, lambda * inv_l))
}

/// LISTA initialized so that it reproduces `stages` ISTA iterations.
pub fn analytic_lista(dict: &Dictionary, lambda: f64, stages: usize) -> Result<ListaEncoderParams<f64>> {
    let (w, s, gamma) = analytic_parts(dict, lambda)?;
    ListaEncoderParams::new(w, s, gamma, stages)
}

/// LeSITA initialized so that it reproduces `stages` iterations of the
/// side-information proximal gradient method.
pub fn analytic_lesita(dict: &Dictionary, lambda: f64, stages: usize) -> Result<LesitaEncoderParams<f64>> {
    let (r, q, mu) = analytic_parts(dict, lambda)?;
    LesitaEncoderParams::new(r, q, mu, stages)
}

/// Gaussian matrix with standard deviation [`INIT_STD`].
pub fn gaussian<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    gaussian_shaped(rng, &[rows, cols])
}

pub fn gaussian_shaped<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<F> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| F::lit(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

pub fn random_lista<F: Real>(n_feat: usize, n_code: usize, stages: usize, seed: u64) -> Result<ListaEncoderParams<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = gaussian(&mut rng, n_code, n_feat);
    let s = gaussian(&mut rng, n_code, n_code);
    ListaEncoderParams::new(w, s, F::lit(INIT_THRESHOLD), stages)
}

pub fn random_lesita<F: Real>(n_feat: usize, n_code: usize, stages: usize, seed: u64) -> Result<LesitaEncoderParams<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = gaussian(&mut rng, n_code, n_feat);
    let q = gaussian(&mut rng, n_code, n_code);
    LesitaEncoderParams::new(r, q, F::lit(INIT_THRESHOLD), stages)
}

/// Records a LISTA encoder on `features` (`n_feat x positions`), reading
/// `{prefix}.W`, `{prefix}.S` and `{prefix}.gamma` from the store.
pub fn record_lista<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    prefix: &str,
    features: NodeId,
    stages: usize,
) -> Result<NodeId> {
    check_stages(stages)?;
    let w = g.param(store, &format!("{prefix}.W"))?;
    let s = g.param(store, &format!("{prefix}.S"))?;
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let wz = g.matmul(w, features, &format!("{prefix}.Wz"))?;
    let mut code = g.soft_threshold(wz, gamma, &format!("{prefix}.stage1"))?;
    for t in 1..stages {
        let pre = g.matmul_add(s, code, wz, &format!("{prefix}.pre{}", t + 1))?;
        code = g.soft_threshold(pre, gamma, &format!("{prefix}.stage{}", t + 1))?;
    }
    Ok(code)
}

/// Records a LeSITA encoder on `features` with side codes `side` (both
/// `n x positions`), reading `{prefix}.R`, `{prefix}.Q` and `{prefix}.mu`.
pub fn record_lesita<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    prefix: &str,
    features: NodeId,
    side: NodeId,
    stages: usize,
) -> Result<NodeId> {
    check_stages(stages)?;
    let r = g.param(store, &format!("{prefix}.R"))?;
    let q = g.param(store, &format!("{prefix}.Q"))?;
    let mu = g.param(store, &format!("{prefix}.mu"))?;
    let ry = g.matmul(r, features, &format!("{prefix}.Ry"))?;
    let mut code = g.side_prox(ry, side, mu, &format!("{prefix}.stage1"))?;
    for t in 1..stages {
        let pre = g.matmul_add(q, code, ry, &format!("{prefix}.pre{}", t + 1))?;
        code = g.side_prox(pre, side, mu, &format!("{prefix}.stage{}", t + 1))?;
    }
    Ok(code)
}

/// Regression of LeSITA codes onto target codes; samples are column
/// batches `(features, side codes, target codes)`.
#[derive(Debug, Clone, Copy)]
pub struct LesitaRegression {
    pub stages: usize,
}

pub const LESITA_PREFIX: &str = "lesita";

impl Model<f64> for LesitaRegression {
    type Sample = (Tensor<f64>, Tensor<f64>, Tensor<f64>);

    fn loss(&self, g: &mut Graph<f64>, store: &ParamStore<f64>, s: &Self::Sample) -> Result<NodeId> {
        let y = g.input("features", s.0.clone())?;
        let side = g.input("side", s.1.clone())?;
        let target = g.input("target", s.2.clone())?;
        let code = record_lesita(g, store, LESITA_PREFIX, y, side, self.stages)?;
        g.sse(code, target, "code_sse")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{ista_step, l1l1_step, SideInfoProblem, SparseProblem};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_dict(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Dictionary {
        let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Dictionary::from_rows(rows, cols, data).unwrap()
    }

    #[test]
    fn lista_identity_example() {
        let p = ListaEncoderParams::<f64>::new(Tensor::identity(2), Tensor::zeros(&[2, 2]), 0.15, 3).unwrap();
        let out = lista_forward(&p, &[0.5, 0.1]).unwrap();
        assert!((out[0] - 0.35).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn single_stage_is_prox_of_input_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_lista::<f64>(5, 4, 1, 9).unwrap();
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wz = p.w().matvec(&z).unwrap();
        let want: Vec<f64> = wz.iter().map(|&u| shrink(u, 0.15)).collect();
        assert_eq!(lista_forward(&p, &z).unwrap(), want);
    }

    #[test]
    fn lesita_examples() {
        let p = LesitaEncoderParams::new(Tensor::identity(1), Tensor::zeros(&[1, 1]), 0.5, 4).unwrap();
        assert_eq!(lesita_forward(&p, &[1.5], &[1.0]).unwrap(), vec![1.0]);

        // zero side code: every stage is soft thresholding at 2 mu
        let l = random_lesita::<f64>(6, 5, 3, 1).unwrap();
        let as_lista = ListaEncoderParams::new(l.r().clone(), l.q().clone(), 2.0 * l.mu(), 3).unwrap();
        let y = [0.3, -1.2, 0.8, 2.0, -0.4, 0.1];
        assert_eq!(
            lesita_forward(&l, &y, &[0.0; 5]).unwrap(),
            lista_forward(&as_lista, &y).unwrap()
        );
    }

    #[test]
    fn shape_errors() {
        let p = random_lista::<f64>(3, 2, 2, 0).unwrap();
        assert!(lista_forward(&p, &[0.0; 2]).is_err());
        let q = random_lesita::<f64>(3, 2, 2, 0).unwrap();
        assert!(lesita_forward(&q, &[0.0; 3], &[0.0; 3]).is_err());
        assert!(ListaEncoderParams::new(Tensor::<f64>::zeros(&[2, 3]), Tensor::zeros(&[3, 3]), 0.1, 1).is_err());
        assert!(ListaEncoderParams::new(Tensor::<f64>::zeros(&[2, 3]), Tensor::zeros(&[2, 2]), -0.1, 1).is_err());
        assert!(ListaEncoderParams::new(Tensor::<f64>::zeros(&[2, 3]), Tensor::zeros(&[2, 2]), 0.1, 0).is_err());
    }

    #[test]
    fn decoder_examples() {
        let d = LinearDecoderParams::new(Tensor::<f64>::identity(3)).unwrap();
        assert_eq!(decode(&d, &[0.1, -0.2, 0.3]).unwrap(), vec![0.1, -0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = gaussian::<f64>(&mut rng, 4, 3);
        let d = LinearDecoderParams::new(m.clone()).unwrap();
        assert_eq!(decode(&d, &[0.0; 3]).unwrap(), vec![0.0; 4]);
        let code = [0.5, -1.0, 2.0];
        let got = decode(&d, &code).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += m.at2(i, j) * code[j];
            }
            assert!((got[i] - acc).abs() < 1e-14);
        }
        let code_major = m.transpose().unwrap();
        assert_eq!(LinearDecoderParams::from_code_major(&code_major).unwrap(), d);
    }

    #[test]
    fn analytic_init_closed_forms() {
        let p = analytic_lista(&Dictionary::identity(2), 0.5, 3).unwrap();
        assert!((p.gamma() - 0.5).abs() < 1e-12);
        for (a, b) in p.w().data().iter().zip(Tensor::<f64>::identity(2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.s().data().iter().all(|v| v.abs() < 1e-12));

        let d = Dictionary::from_rows(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let p = analytic_lesita(&d, 1.0, 3).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-8;
        assert!(close(p.mu(), 0.25));
        assert!(close(p.r().at2(0, 0), 0.5) && close(p.r().at2(1, 1), 0.25));
        assert!(close(p.q().at2(0, 0), 0.0) && close(p.q().at2(1, 1), 0.75));
        assert!(close(p.r().at2(0, 1), 0.0) && close(p.q().at2(1, 0), 0.0));
    }

    #[test]
    fn analytic_identity_s_plus_wd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = random_dict(8, 16, &mut rng);
        let p = analytic_lista(&d, 0.1, 1).unwrap();
        let wd = p.w().matmul(d.matrix()).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((p.s().at2(i, j) + wd.at2(i, j) - id).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unfolding_matches_solver_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let d = random_dict(8, 16, &mut rng);
            let y: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let side: Vec<f64> = (0..16).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
            let lam = 0.1;
            let l = lipschitz(&d, POWER_TOL, POWER_MAX_ITERS).unwrap().value;
            let sp = SparseProblem::new(d.clone(), y.clone(), lam).unwrap();
            let si = SideInfoProblem::new(d.clone(), y.clone(), lam, side.clone()).unwrap();
            let t = 5;
            let mut a = vec![0.0; 16];
            let mut b = vec![0.0; 16];
            for _ in 0..t {
                a = ista_step(&sp, &a, l).unwrap();
                b = l1l1_step(&si, &b, l).unwrap();
            }
            let lista = lista_forward(&analytic_lista(&d, lam, t).unwrap(), &y).unwrap();
            let lesita = lesita_forward(&analytic_lesita(&d, lam, t).unwrap(), &y, &side).unwrap();
            for i in 0..16 {
                assert!((lista[i] - a[i]).abs() <= 1e-12);
                assert!((lesita[i] - b[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn random_init_properties() {
        let a = random_lista::<f64>(128, 128, 3, 5).unwrap();
        let b = random_lista::<f64>(128, 128, 3, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gamma(), 0.15);
        let c = random_lesita::<f64>(10, 7, 2, 5).unwrap();
        assert_eq!(c.mu(), 0.15);
        let data = a.w().data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (data.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.09..=0.11).contains(&std), "{std}");
    }

    #[test]
    fn weights_are_tied_across_stages() {
        // one stored copy of each matrix; the recorded graph binds the same parameter at every stage
        let p = random_lesita::<f64>(4, 3, 5, 2).unwrap();
        let mut store = ParamStore::new();
        p.insert_into(&mut store, "lesita").unwrap();
        assert_eq!(store.len(), 3);
        let mut g = Graph::new();
        let f = g.input("f", Tensor::from_vec(&[4, 1], vec![0.5, -0.2, 0.9, 0.1]).unwrap()).unwrap();
        let s = g.input("s", Tensor::from_vec(&[3, 1], vec![0.2, -0.3, 0.0]).unwrap()).unwrap();
        let out = record_lesita(&mut g, &store, "lesita", f, s, 5).unwrap();
        let direct = lesita_forward(&p, &[0.5, -0.2, 0.9, 0.1], &[0.2, -0.3, 0.0]).unwrap();
        // GEMM and matvec sum in different orders
        for (a, b) in g.value(out).data().iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-14);
        }
        assert_eq!(LesitaEncoderParams::from_store(&store, "lesita", 5).unwrap(), p);
    }

    #[test]
    fn graph_lista_matches_vector_forward() {
        let p = random_lista::<f64>(6, 4, 3, 12).unwrap();
        let mut store = ParamStore::new();
        p.insert_into(&mut store, "enc").unwrap();
        let cols = [[0.4, -0.9, 1.1, 0.3, -0.2, 0.7], [1.0, 0.5, -0.5, -1.0, 0.25, 0.0]];
        let mut feat = Tensor::zeros(&[6, 2]);
        for (j, c) in cols.iter().enumerate() {
            for i in 0..6 {
                feat.data_mut()[i * 2 + j] = c[i];
            }
        }
        let mut g = Graph::new();
        let f = g.input("f", feat).unwrap();
        let out = record_lista(&mut g, &store, "enc", f, 3).unwrap();
        for (j, c) in cols.iter().enumerate() {
            let v = lista_forward(&p, c).unwrap();
            for i in 0..4 {
                assert!((g.value(out).at2(i, j) - v[i]).abs() <= 1e-14);
            }
        }
    }
}
