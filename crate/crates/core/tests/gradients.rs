use fedtraffic::neuralnet::{backward, forward, init_model, Architecture, Model, ModelSpec, ParameterVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;

fn batch(spec: &ModelSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n * spec.input_size()).map(|_| rng.random::<f64>()).collect();
    let y = (0..n * spec.n_targets).map(|_| rng.random::<f64>()).collect();
    (x, y)
}

fn loss(model: &Model, p: &ParameterVector, x: &[f64], y: &[f64]) -> f64 {
    let pred = model.forward(p, x).unwrap();
    pred.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Central difference with the standard step, unless a ReLU switches
/// inside `[θ − h, θ + h]`: the loss has a kink there and the step is
/// halved until the interval is smooth again.
fn central_difference(model: &Model, p: &mut ParameterVector, k: usize, x: &[f64], y: &[f64], base: &[bool]) -> f64 {
    let orig = p.values[k];
    let mut h = STEP;
    loop {
        p.values[k] = orig + h;
        let up = loss(model, p, x, y);
        let smooth_up = model.relu_pattern(p, x).unwrap() == base;
        p.values[k] = orig - h;
        let down = loss(model, p, x, y);
        let smooth_down = model.relu_pattern(p, x).unwrap() == base;
        p.values[k] = orig;
        if (smooth_up && smooth_down) || h < 1e-9 {
            return (up - down) / (2.0 * h);
        }
        h /= 2.0;
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over the given coordinates.
fn max_rel_error(spec: &ModelSpec, batch_size: usize, seed: u64, coords: impl Fn(&ParameterVector) -> Vec<usize>) -> (f64, usize) {
    let model = Model::new(spec).unwrap();
    let params = init_model(spec, seed).unwrap();
    let (x, y) = batch(spec, batch_size, seed + 1);
    let (_, g) = model.loss_and_gradient(&params, &x, &y).unwrap();
    let mut worst = 0.0f64;
    let picked = coords(&params);
    let mut p = params.clone();
    let base_pattern = model.relu_pattern(&params, &x).unwrap();
    for &k in &picked {
        let numeric = central_difference(&model, &mut p, k, &x, &y, &base_pattern);
        let denom = g[k].abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max((g[k] - numeric).abs() / denom);
    }
    (worst, picked.len())
}

fn every(p: &ParameterVector) -> Vec<usize> {
    (0..p.len()).collect()
}

/// A fixed number of random coordinates from every tensor.
fn per_tensor(n: usize) -> impl Fn(&ParameterVector) -> Vec<usize> {
    move |p| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        p.layout
            .tensors
            .iter()
            .flat_map(|t| {
                let span = t.span();
                (0..n.min(t.len())).map(|_| rng.random_range(span.clone())).collect::<Vec<_>>()
            })
            .collect()
    }
}

#[test]
fn small_instances_match_finite_differences_on_every_parameter() {
    for arch in Architecture::ALL {
        let spec = ModelSpec::new(arch, 4, 3).with_width(3);
        let (err, n) = max_rel_error(&spec, 3, 7, every);
        assert_eq!(n, spec.parameter_count());
        assert!(err < 1e-4, "{arch}: max relative error {err:e}");
    }
}

#[test]
fn reference_sized_models_match_finite_differences() {
    for arch in Architecture::ALL {
        let spec = ModelSpec::new(arch, 10, 11);
        let (err, n) = max_rel_error(&spec, 4, 21, per_tensor(40));
        assert!(n >= 40 * 2, "{arch}: only {n} coordinates checked");
        assert!(err < 1e-4, "{arch}: max relative error {err:e}");
    }
}

#[test]
fn zero_residual_gives_zero_gradient() {
    for arch in Architecture::ALL {
        let spec = ModelSpec::new(arch, 5, 4).with_width(6);
        let params = init_model(&spec, 3).unwrap();
        let (x, _) = batch(&spec, 5, 4);
        let y = forward(&spec, &params, &x).unwrap();
        let g = backward(&spec, &params, &x, &y).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0), "{arch}");
        assert_eq!(g.layout, params.layout);
    }
}

#[test]
fn duplicating_the_batch_leaves_the_gradient_unchanged() {
    for arch in Architecture::ALL {
        let spec = ModelSpec::new(arch, 5, 4).with_width(6);
        let params = init_model(&spec, 8).unwrap();
        let (x, y) = batch(&spec, 4, 9);
        let g1 = backward(&spec, &params, &x, &y).unwrap();
        let x2 = [x.clone(), x].concat();
        let y2 = [y.clone(), y].concat();
        let g2 = backward(&spec, &params, &x2, &y2).unwrap();
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-6), "{arch}: {a} vs {b}");
        }
    }
}

#[test]
fn forward_is_batch_permutation_equivariant() {
    for arch in Architecture::ALL {
        let spec = ModelSpec::new(arch, 10, 11).with_width(8);
        let params = init_model(&spec, 5).unwrap();
        let (x, _) = batch(&spec, 6, 6);
        let pred = forward(&spec, &params, &x).unwrap();
        let order = [3, 0, 5, 1, 4, 2];
        let s = spec.input_size();
        let xp: Vec<f64> = order.iter().flat_map(|&k| x[k * s..(k + 1) * s].to_vec()).collect();
        let predp = forward(&spec, &params, &xp).unwrap();
        for (row, &k) in order.iter().enumerate() {
            for j in 0..5 {
                let (a, b) = (predp[row * 5 + j], pred[k * 5 + j]);
                assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0), "{arch}");
            }
        }
    }
}

#[test]
fn outputs_are_finite_for_reference_models() {
    for arch in Architecture::ALL {
        let spec = ModelSpec::new(arch, 10, 11);
        let params = init_model(&spec, 0).unwrap();
        assert_eq!(params.len(), spec.parameter_count(), "{arch}");
        let (x, _) = batch(&spec, 3, 1);
        let pred = forward(&spec, &params, &x).unwrap();
        assert_eq!(pred.len(), 15);
        assert!(pred.iter().all(|v| v.is_finite()));
    }
}
