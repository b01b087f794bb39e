use gradshield::nn::{
    forward_loss, generate_synthetic_dataset, input_jacobian_of_gradient, param_gradient,
    DataSample, GradientInputJacobian, LabelRule, LossKind, ModelSpec, ParameterVector,
    SyntheticPrior, Target, ZooModel,
};
use gradshield::rng;
use rand::Rng;

fn sample_for(model: ZooModel, seed: u64) -> DataSample {
    let labels = if model.is_classifier() {
        LabelRule::Classes { classes: ZooModel::CLASSES, teacher_seed: 3 }
    } else {
        LabelRule::Regression { teacher_seed: 3, noise: 0.3 }
    };
    generate_synthetic_dataset(ZooModel::INPUT_DIM, 1, SyntheticPrior::new(1.0).unwrap(), &labels, seed)
        .unwrap()
        .remove(0)
}

fn loss_at(spec: &ModelSpec, values: &[f64], sample: &DataSample) -> f64 {
    let p = ParameterVector::from_values(spec, values.to_vec()).unwrap();
    forward_loss(spec, &p, sample).unwrap()
}

#[test]
fn parameter_gradients_match_central_differences() {
    let models = [ZooModel::Linear, ZooModel::Small, ZooModel::Medium];
    let mut r = rng::stream(11);
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let model = models[k as usize % models.len()];
        let spec = model.spec();
        let mut params = ParameterVector::init(&spec, rng::derive(11, "params", k));
        // Nonzero biases so that every parameter matters.
        for v in params.values_mut() {
            *v += 0.1 * r.random_range(-1.0..1.0);
        }
        let sample = sample_for(model, rng::derive(11, "sample", k));
        let grad = param_gradient(&spec, &params, &sample).unwrap();
        // At most 40 coordinates per triple keeps the medium model cheap.
        let coords: Vec<usize> = if grad.len() <= 40 {
            (0..grad.len()).collect()
        } else {
            (0..40).map(|_| r.random_range(0..grad.len())).collect()
        };
        let h = 1e-5;
        for j in coords {
            let mut v = params.values().to_vec();
            v[j] += h;
            let plus = loss_at(&spec, &v, &sample);
            v[j] -= 2.0 * h;
            let minus = loss_at(&spec, &v, &sample);
            let fd = (plus - minus) / (2.0 * h);
            let err = (fd - grad[j]).abs() / grad[j].abs().max(1.0);
            worst = worst.max(err);
            assert!(err <= 1e-5, "{} triple {k} coordinate {j}: analytic {} vs fd {fd}", model.name(), grad[j]);
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn input_gradient_matches_central_differences() {
    for (k, model) in [ZooModel::Linear, ZooModel::Small, ZooModel::Medium].into_iter().enumerate() {
        let spec = model.spec();
        let params = ParameterVector::init(&spec, 5 + k as u64);
        let sample = sample_for(model, 17 + k as u64);
        let eval = spec.evaluate(params.values(), &sample.x, &sample.target).unwrap();
        let h = 1e-5;
        for i in 0..sample.x.len() {
            let mut x = sample.x.clone();
            x[i] += h;
            let plus = spec.evaluate(params.values(), &x, &sample.target).unwrap().loss;
            x[i] -= 2.0 * h;
            let minus = spec.evaluate(params.values(), &x, &sample.target).unwrap().loss;
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - eval.input_grad[i]).abs() <= 1e-5 * eval.input_grad[i].abs().max(1.0));
        }
    }
}

/// Plain loops, no shared code with the crate's forward pass.
fn naive_mlp_loss(widths: &[usize], params: &[f64], x: &[f64], class: usize) -> f64 {
    let mut a = x.to_vec();
    let mut offset = 0;
    for (l, w) in widths.windows(2).enumerate() {
        let (inputs, outputs) = (w[0], w[1]);
        let weights = &params[offset..offset + inputs * outputs];
        let bias = &params[offset + inputs * outputs..offset + inputs * outputs + outputs];
        offset += inputs * outputs + outputs;
        let mut out = vec![0.0; outputs];
        for o in 0..outputs {
            let mut s = bias[o];
            for i in 0..inputs {
                s += weights[o * inputs + i] * a[i];
            }
            out[o] = if l + 2 < widths.len() { s.tanh() } else { s };
        }
        a = out;
    }
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - a[class]
}

#[test]
fn mlp_forward_matches_naive_oracle() {
    let widths = [16, 5, 3];
    let spec = ModelSpec::mlp(&widths, LossKind::CrossEntropy).unwrap();
    for seed in 0..20u64 {
        let mut params = ParameterVector::init(&spec, seed);
        let mut r = rng::stream(seed);
        for v in params.values_mut() {
            *v += 0.05 * r.random_range(-1.0..1.0);
        }
        let sample = sample_for(ZooModel::Small, 100 + seed);
        let Target::Class(c) = sample.target else { panic!("classifier sample") };
        let ours = forward_loss(&spec, &params, &sample).unwrap();
        let oracle = naive_mlp_loss(&widths, params.values(), &sample.x, c);
        assert!((ours - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{ours} vs {oracle}");
    }
}

#[test]
fn linear_jacobian_matches_closed_form() {
    // g = r [x; 1] with r = <w, x> + b - t, so dg_j/dx_i = w_i x~_j + r [i == j].
    let spec = ModelSpec::linear(4, 1, true, LossKind::SquaredError).unwrap();
    let params = ParameterVector::from_values(&spec, vec![0.5, -1.0, 2.0, 0.25, 0.1]).unwrap();
    let sample = DataSample::new(vec![1.0, -2.0, 0.5, 3.0], Target::Value(0.7)).unwrap();
    let jac = input_jacobian_of_gradient(&spec, &params, &sample, 1e-4).unwrap();
    let w = &params.values()[..4];
    let r: f64 = w.iter().zip(&sample.x).map(|(a, b)| a * b).sum::<f64>() + 0.1 - 0.7;
    for j in 0..5 {
        let xt = if j < 4 { sample.x[j] } else { 1.0 };
        for (i, wi) in w.iter().enumerate() {
            let expect = wi * xt + if i == j { r } else { 0.0 };
            assert!((jac.get(j, i) - expect).abs() < 1e-8, "[{j},{i}] {} vs {expect}", jac.get(j, i));
        }
    }
}

fn diff_norm(a: &GradientInputJacobian, b: &GradientInputJacobian) -> f64 {
    a.entries.iter().zip(&b.entries).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn jacobian_error_is_second_order_in_step() {
    let spec = ZooModel::Small.spec();
    let params = ParameterVector::init(&spec, 9);
    let sample = sample_for(ZooModel::Small, 21);
    let h = 2e-2;
    let j1 = input_jacobian_of_gradient(&spec, &params, &sample, h).unwrap();
    let j2 = input_jacobian_of_gradient(&spec, &params, &sample, h / 2.0).unwrap();
    let j4 = input_jacobian_of_gradient(&spec, &params, &sample, h / 4.0).unwrap();
    let ratio = diff_norm(&j1, &j2) / diff_norm(&j2, &j4);
    assert!((ratio - 4.0).abs() < 0.2, "halving ratio {ratio}");
}
