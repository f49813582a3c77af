mod common;

use common::oracles;
use common::random_tensor;
use proptest::prelude::*;
use vmsc::numerics::{Rng, Tensor3};
use vmsc::volterra::{cascade, BankOutput, VolterraBank, VolterraChannel};
use vmsc::Error;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_bank(rng: &mut Rng, k: usize, cin: usize, channels: usize) -> VolterraBank {
    let chans = (0..channels)
        .map(|_| VolterraChannel::random(k, cin, 0, rng).unwrap())
        .collect();
    VolterraBank::new(cin, chans, BankOutput::Stacked).unwrap()
}

#[test]
fn forward_matches_double_sum_on_100_instances() {
    let mut rng = Rng::new(2024);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let k = [1, 3, 5][i % 3];
        let cin = [1, 3][(i / 3) % 2];
        let h = 2 + rng.below(5);
        let w = 2 + rng.below(5);
        let chans = 1 + rng.below(3);
        let bank = random_bank(&mut rng, k, cin, chans);
        let x = random_tensor(h, w, cin, &mut rng);
        let got = bank.forward(&x).unwrap();
        let want = oracles::volterra_bank(&bank, &x);
        worst = worst.max(max_abs_diff(got.data(), want.data()));
    }
    assert!(worst < 1e-12, "max abs error {worst:e}");
}

#[test]
fn decoder_bank_matches_double_sum() {
    let mut rng = Rng::new(5);
    let dec = VolterraBank::mirrored_decoder(&[(3, 1), (2, 3)], &mut rng).unwrap();
    let z = random_tensor(5, 4, 5, &mut rng);
    let got = dec.forward(&z).unwrap();
    assert_eq!(got.shape(), (5, 4, 1));
    assert!(max_abs_diff(got.data(), oracles::volterra_bank(&dec, &z).data()) < 1e-12);
}

#[test]
fn zero_input_gives_zero_output() {
    let mut rng = Rng::new(1);
    let bank = random_bank(&mut rng, 3, 2, 3);
    let y = bank.forward(&Tensor3::zeros(4, 4, 2)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_quadratic_is_linear_cross_correlation() {
    let mut rng = Rng::new(8);
    let mut ch = VolterraChannel::random(3, 1, 0, &mut rng).unwrap();
    ch.quadratic_mut().iter_mut().for_each(|v| *v = 0.0);
    let bank = VolterraBank::new(1, vec![ch.clone()], BankOutput::Stacked).unwrap();
    let x = random_tensor(5, 5, 1, &mut rng);
    let y = bank.forward(&x).unwrap();
    for r in 0..5 {
        for c in 0..5 {
            let mut acc = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    let (yy, xx) = (r as isize + dy as isize - 1, c as isize + dx as isize - 1);
                    if (0..5).contains(&yy) && (0..5).contains(&xx) {
                        acc += ch.linear()[dy * 3 + dx] * x.get(yy as usize, xx as usize, 0);
                    }
                }
            }
            assert!((y.get(r, c, 0) - acc).abs() < 1e-13);
        }
    }
}

#[test]
fn parameter_counts() {
    let mut rng = Rng::new(0);
    assert_eq!(VolterraChannel::zeros(1, 1, 0).unwrap().param_count(), 2);
    assert_eq!(VolterraChannel::zeros(3, 1, 0).unwrap().param_count(), 54);
    let eyb = VolterraBank::encoder(1, &[(7, 1), (7, 3), (6, 5)], &mut rng).unwrap();
    assert_eq!(eyb.param_count(), 7 * 2 + 7 * 54 + 6 * (25 + 325));
    assert_eq!(eyb.param_count(), 2492);
    assert_eq!(eyb.params().len(), eyb.param_count());
    let dec = VolterraBank::mirrored_decoder(&[(7, 1), (7, 3), (6, 5)], &mut rng).unwrap();
    assert_eq!(dec.param_count(), 2492);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = Rng::new(3);
    let bank = random_bank(&mut rng, 3, 2, 2);
    let x = random_tensor(4, 3, 2, &mut rng);
    let g = bank.backward(&x, &Tensor3::zeros(4, 3, 2), true).unwrap();
    assert!(g.params.iter().all(|&v| v == 0.0));
    assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn channel_mismatch_is_a_shape_error() {
    let mut rng = Rng::new(3);
    let bank = random_bank(&mut rng, 1, 2, 1);
    assert!(matches!(bank.forward(&Tensor3::zeros(2, 2, 3)), Err(Error::Shape(_))));
    assert!(matches!(
        bank.backward(&Tensor3::zeros(2, 2, 2), &Tensor3::zeros(2, 2, 2), false),
        Err(Error::Shape(_))
    ));
}

fn scalar_bank(a: f64, b: f64) -> VolterraBank {
    let mut ch = VolterraChannel::zeros(1, 1, 0).unwrap();
    ch.linear_mut()[0] = a;
    ch.quadratic_mut()[0] = b;
    VolterraBank::new(1, vec![ch], BankOutput::Stacked).unwrap()
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn poly_add(p: &[f64], q: &[f64]) -> Vec<f64> {
    let n = p.len().max(q.len());
    (0..n)
        .map(|i| p.get(i).unwrap_or(&0.0) + q.get(i).unwrap_or(&0.0))
        .collect()
}

/// Coefficients of the degree-4 polynomial interpolating `f` at five nodes.
fn interpolate_quartic(f: impl Fn(f64) -> f64) -> Vec<f64> {
    let nodes = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut coeffs = vec![0.0; 5];
    for (i, &xi) in nodes.iter().enumerate() {
        let mut basis = vec![1.0];
        let mut denom = 1.0;
        for (j, &xj) in nodes.iter().enumerate() {
            if i != j {
                basis = poly_mul(&basis, &[-xj, 1.0]);
                denom *= xi - xj;
            }
        }
        let yi = f(xi);
        for (c, b) in coeffs.iter_mut().zip(&basis) {
            *c += yi * b / denom;
        }
    }
    coeffs
}

#[test]
fn cascade_of_two_scalar_layers_is_a_quartic() {
    let (a, b, c, d) = (0.7, -0.3, 1.1, 0.4);
    let banks = [scalar_bank(a, b), scalar_bank(c, d)];
    // first layer y = a x + b x², second z = c y + d y²
    let y = [0.0, a, b];
    let expected = poly_add(&poly_mul(&[c], &y), &poly_mul(&[d], &poly_mul(&y, &y)));
    let z = |x: f64| {
        cascade(&banks, &Tensor3::from_vec(1, 1, 1, vec![x]).unwrap())
            .unwrap()
            .data()[0]
    };
    let got = interpolate_quartic(z);
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-12, "{got:?} vs {expected:?}");
    }
    // a degree-4 interpolant that agrees off the nodes confirms the degree
    for x in [-1.7f64, 0.3, 2.9] {
        let p: f64 = expected.iter().enumerate().map(|(i, c)| c * x.powi(i as i32)).sum();
        assert!((z(x) - p).abs() < 1e-12);
    }
}

#[test]
fn cascade_single_and_linear() {
    let mut rng = Rng::new(12);
    let bank = random_bank(&mut rng, 3, 1, 2);
    let x = random_tensor(4, 4, 1, &mut rng);
    assert_eq!(cascade(std::slice::from_ref(&bank), &x).unwrap(), bank.forward(&x).unwrap());

    let mut lin = |cin: usize, chans: usize| {
        let mut b = random_bank(&mut rng, 3, cin, chans);
        for ch in b.channels_mut() {
            ch.quadratic_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        b
    };
    let (first, second) = (lin(1, 2), lin(2, 1));
    let banks = [first.clone(), second.clone()];
    let composed = second.forward(&first.forward(&x).unwrap()).unwrap();
    assert_eq!(cascade(&banks, &x).unwrap(), composed);
    // linear composition is homogeneous of degree one
    let scaled = cascade(&banks, &x.scaled(-2.5)).unwrap();
    assert!(max_abs_diff(scaled.data(), composed.scaled(-2.5).data()) < 1e-12);

    assert!(matches!(cascade(&[first.clone(), first], &x), Err(Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_equals_oracle(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5]), cin in 1usize..=3) {
        let mut rng = Rng::new(seed);
        let bank = random_bank(&mut rng, k, cin, 2);
        let x = random_tensor(1 + rng.below(5), 1 + rng.below(5), cin, &mut rng);
        let err = max_abs_diff(bank.forward(&x).unwrap().data(), oracles::volterra_bank(&bank, &x).data());
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn quadratic_part_scales_with_square(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let mut quad = random_bank(&mut rng, 3, 2, 2);
        let mut lin = quad.clone();
        for ch in quad.channels_mut() {
            ch.linear_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        for ch in lin.channels_mut() {
            ch.quadratic_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = random_tensor(4, 3, 2, &mut rng);
        let xs = x.scaled(alpha);
        let q = quad.forward(&x).unwrap();
        prop_assert!(max_abs_diff(quad.forward(&xs).unwrap().data(), q.scaled(alpha * alpha).data()) < 1e-10);
        let l = lin.forward(&x).unwrap();
        prop_assert!(max_abs_diff(lin.forward(&xs).unwrap().data(), l.scaled(alpha).data()) < 1e-10);
    }

    #[test]
    fn param_count_matches_vector_length(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5]), cin in 1usize..=3, n in 1usize..4) {
        let mut rng = Rng::new(seed);
        let mut bank = random_bank(&mut rng, k, cin, n);
        let p = k * k * cin;
        prop_assert_eq!(bank.param_count(), n * (p + p * (p + 1) / 2));
        let params = bank.params();
        prop_assert_eq!(params.len(), bank.param_count());
        let before = bank.clone();
        bank.set_params(&params).unwrap();
        prop_assert_eq!(bank, before);
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let bank = random_bank(&mut rng, 3, 2, 2);
        let mut buf = Vec::new();
        bank.write_to(&mut buf).unwrap();
        let back = VolterraBank::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back, bank);
    }
}
