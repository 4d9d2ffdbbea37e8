use unfoldsr::dataset::{gen_synthetic_batch, SyntheticSample, SyntheticSpec};
use unfoldsr::diffengine::{forward_backward, AdamConfig, AdamState, ParamStore};
use unfoldsr::solvers::{l1l1_solve, SideInfoProblem, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use unfoldsr::tensor::Tensor;
use unfoldsr::unfolded::{analytic_lesita, lesita_forward, LesitaEncoderParams, LesitaRegression, LESITA_PREFIX};

const STAGES: usize = 3;

fn columns(vectors: &[&[f64]]) -> Tensor<f64> {
    let (rows, cols) = (vectors[0].len(), vectors.len());
    let mut t = Tensor::zeros(&[rows, cols]);
    for (j, v) in vectors.iter().enumerate() {
        for (i, x) in v.iter().enumerate() {
            t.data_mut()[i * cols + j] = *x;
        }
    }
    t
}

fn code_mse(params: &LesitaEncoderParams<f64>, samples: &[(SyntheticSample, Vec<f64>)]) -> f64 {
    let mut err = 0.0;
    let mut n = 0;
    for (s, oracle) in samples {
        let code = lesita_forward(params, &s.y, &s.side).unwrap();
        err += code.iter().zip(oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += code.len();
    }
    err / n as f64
}

#[test]
fn trained_lesita_beats_analytic_init() {
    let spec = SyntheticSpec {
        n_y: 16,
        n_alpha: 32,
        sparsity: 3,
        side_perturb: 1,
        noise_std: 0.01,
        lambda: 0.1,
        seed: 42,
    };
    let batch = gen_synthetic_batch(&spec, 2000).unwrap();
    let labelled: Vec<(SyntheticSample, Vec<f64>)> = batch
        .samples
        .iter()
        .map(|s| {
            let p = SideInfoProblem::new(batch.dict.clone(), s.y.clone(), spec.lambda, s.side.clone()).unwrap();
            let oracle = l1l1_solve(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap().solution;
            (s.clone(), oracle)
        })
        .collect();
    let (train, test) = labelled.split_at(1500);

    let init = analytic_lesita(&batch.dict, spec.lambda, STAGES).unwrap();
    let mut store = ParamStore::new();
    init.insert_into(&mut store, LESITA_PREFIX).unwrap();
    let model = LesitaRegression { stages: STAGES };
    let minibatches: Vec<_> = train
        .chunks(50)
        .map(|c| {
            let ys: Vec<&[f64]> = c.iter().map(|(s, _)| s.y.as_slice()).collect();
            let sides: Vec<&[f64]> = c.iter().map(|(s, _)| s.side.as_slice()).collect();
            let targets: Vec<&[f64]> = c.iter().map(|(_, o)| o.as_slice()).collect();
            (columns(&ys), columns(&sides), columns(&targets))
        })
        .collect();
    let mut adam = AdamState::new(&store, AdamConfig::with_lr(1e-3)).unwrap();
    for _ in 0..20 {
        for mb in &minibatches {
            forward_backward(&model, &mut store, std::slice::from_ref(mb)).unwrap();
            adam.step(&mut store).unwrap();
        }
    }
    let trained = LesitaEncoderParams::from_store(&store, LESITA_PREFIX, STAGES).unwrap();

    let before = code_mse(&init, test);
    let after = code_mse(&trained, test);
    assert!(after < before, "trained {after} vs analytic {before}");
}
