use approx::assert_relative_eq;
use magloop::tf::{self, bode, logspace, poly, CombineOp, PoleZeroGain, RationalTf, Stability};
use magloop::{canonical_plant, Error};
use num_complex::Complex64;
use proptest::prelude::*;

fn tf_of(n: &[f64], d: &[f64]) -> RationalTf {
    RationalTf::new(n.to_vec(), d.to_vec()).unwrap()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn plant_dc_value() {
    // 1.6e4 * 8e5 / 4e9
    let v = canonical_plant().eval(0.0).unwrap();
    assert_relative_eq!(v.re, 3.2, max_relative = 1e-15);
    assert_eq!(v.im, 0.0);
}

#[test]
fn identity_evaluates_to_one() {
    for w in [0.0, 1.0, 1e9] {
        assert_eq!(RationalTf::one().eval(w).unwrap(), c(1.0, 0.0));
    }
}

#[test]
fn allpass_at_its_corner() {
    let ap = tf_of(&[8e5, -1.0], &[8e5, 1.0]);
    let v = ap.eval(8e5).unwrap();
    assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-15);
    assert_relative_eq!(v.arg().to_degrees(), -90.0, epsilon = 1e-12);
}

#[test]
fn evaluation_at_pole_is_an_error() {
    let t = tf_of(&[1.0], &[0.0, 1.0]);
    assert!(matches!(tf::tf_evaluate(&t, 0.0), Err(Error::EvaluationAtPole { .. })));
}

#[test]
fn combine_examples() {
    let integ = tf_of(&[1.0], &[0.0, 1.0]);
    let diff = tf_of(&[0.0, 1.0], &[1.0]);
    assert_eq!(tf::tf_combine(&integ, &diff, CombineOp::Multiply).unwrap(), RationalTf::one());
    assert_eq!(
        tf::tf_combine(&integ, &RationalTf::one(), CombineOp::UnityFeedback).unwrap(),
        tf_of(&[1.0], &[1.0, 1.0])
    );
    assert_eq!(
        tf::tf_combine(&tf_of(&[1.0], &[1.0, 1.0]), &tf_of(&[1.0], &[2.0, 1.0]), CombineOp::Add).unwrap(),
        tf_of(&[3.0, 2.0], &[2.0, 3.0, 1.0])
    );
}

#[test]
fn degree_overflow() {
    let big = tf_of(&[1.0], &poly::from_roots(&vec![c(-1.0, 0.0); 6]));
    let other = tf_of(&[1.0], &poly::from_roots(&vec![c(-2.0, 0.0); 6]));
    assert!(matches!(big.mul(&other), Err(Error::DegreeOverflow { degree: 12, bound: 10 })));
}

#[test]
fn plant_roots() {
    let pz = tf::poles_zeros(&canonical_plant());
    assert_eq!(pz.zeros.len(), 1);
    assert_relative_eq!(pz.zeros[0].re, 8e5, max_relative = 1e-14);
    assert_eq!(pz.zeros[0].im, 0.0);
    // quadratic formula oracle
    let (b, cc) = (4.1e5_f64, 4e9_f64);
    let disc = (b * b - 4.0 * cc).sqrt();
    let want = [(-b - disc) / 2.0, (-b + disc) / 2.0];
    assert_relative_eq!(pz.poles[0].re, want[0], max_relative = 1e-12);
    assert_relative_eq!(pz.poles[1].re, want[1], max_relative = 1e-9);
    assert_relative_eq!(pz.poles[1].re, -1e4, max_relative = 1e-12);
    assert_eq!(pz.gain, -1.6e4);

    let lag = tf::poles_zeros(&tf_of(&[1.0], &[1.0, 1.0]));
    assert!(lag.zeros.is_empty());
    assert_eq!(lag.poles, vec![c(-1.0, 0.0)]);
    assert_eq!(lag.gain, 1.0);
}

#[test]
fn stability_examples() {
    assert_eq!(tf::is_stable(&canonical_plant()), Stability::Stable);
    assert_eq!(tf::is_stable(&tf_of(&[1.0], &[0.0, 1.0])), Stability::Marginal);
    assert_eq!(tf::is_stable(&tf_of(&[1.0], &[-1.0, 1.0])), Stability::Unstable);
}

#[test]
fn plant_lags_integrator_by_more_than_45_degrees_at_100_khz() {
    let w = 2.0 * std::f64::consts::PI * 1e5;
    let grid = logspace(1.0, w, 400);
    let p = bode(&canonical_plant(), &grid).unwrap();
    let i = bode(&tf_of(&[1.0], &[0.0, 1.0]), &grid).unwrap();
    let lag = i.points()[399].phase_deg - p.points()[399].phase_deg;
    assert!(lag > 45.0, "{lag}");
}

#[test]
fn bode_examples() {
    let r = bode(&RationalTf::constant(3.2).unwrap(), &logspace(1.0, 1e8, 30)).unwrap();
    assert!(r.points().iter().all(|p| p.mag() == 3.2 && p.phase_deg == 0.0));
    let r = bode(&tf_of(&[1.0], &[0.0, 1.0]), &[1.0, 10.0, 100.0]).unwrap();
    let mags: Vec<f64> = r.points().iter().map(|p| p.mag()).collect();
    assert_eq!(mags, vec![1.0, 0.1, 0.01]);
    assert!(r.points().iter().all(|p| p.phase_deg == -90.0));
}

#[test]
fn json_round_trip() {
    let p = canonical_plant();
    let s = serde_json::to_string(&p).unwrap();
    assert_eq!(s, r#"{"num":[12800000000.0,-16000.0],"den":[4000000000.0,410000.0,1.0]}"#);
    assert_eq!(serde_json::from_str::<RationalTf>(&s).unwrap(), p);
    assert!(serde_json::from_str::<RationalTf>(r#"{"num":[1],"den":[1],"x":1}"#).is_err());
}

fn root() -> impl Strategy<Value = Complex64> {
    prop_oneof![
        (-1e3..1e3f64).prop_filter("nonzero", |x| x.abs() > 1e-2).prop_map(|x| c(x, 0.0)),
        ((-1e3..1e3f64), (1e-1..1e3f64))
            .prop_filter("nonzero", |(x, _)| x.abs() > 1e-2)
            .prop_map(|(x, y)| c(x, y)),
    ]
}

/// Up to `n` roots, closed under conjugation.
fn root_set(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec(root(), 0..=n).prop_map(move |rs| {
        let mut out = Vec::new();
        for r in rs {
            if out.len() >= n {
                break;
            }
            if r.im == 0.0 {
                out.push(r);
            } else if out.len() + 2 <= n {
                out.push(r);
                out.push(r.conj());
            }
        }
        out
    })
}

fn small_tf() -> impl Strategy<Value = RationalTf> {
    (root_set(3), root_set(3), 0.1..10.0f64).prop_map(|(z, p, g)| {
        PoleZeroGain { zeros: z, poles: p, gain: g }.to_tf().unwrap()
    })
}

fn is_conjugate_closed(rs: &[Complex64]) -> bool {
    rs.iter().all(|r| {
        r.im == 0.0 || rs.iter().any(|q| *q == r.conj())
    })
}

fn near_root(w: f64, t: &RationalTf) -> bool {
    t.poles().iter().chain(t.zeros().iter()).any(|p| (c(0.0, w) - p).norm() < 1e-3 * w.max(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn roots_are_conjugate_closed(t in small_tf()) {
        prop_assert!(is_conjugate_closed(&t.poles()));
        prop_assert!(is_conjugate_closed(&t.zeros()));
    }

    #[test]
    fn pole_zero_round_trip(z in root_set(4), p in root_set(4), g in 0.1..10.0f64) {
        let t = PoleZeroGain { zeros: z.clone(), poles: p.clone(), gain: g }.to_tf().unwrap();
        let back = t.pole_zero_gain();
        for (want, got) in [(&z, &back.zeros), (&p, &back.poles)] {
            prop_assert_eq!(want.len(), got.len());
            for r in want.iter() {
                // repeated roots split by O(sqrt(eps)); allow for that
                let close = got.iter().any(|q| (q - r).norm() <= 1e-7 * r.norm().max(1.0));
                let repeated = want.iter().filter(|q| (*q - r).norm() < 1e-3 * r.norm()).count() > 1;
                prop_assert!(close || repeated, "{r} not in {got:?}");
            }
        }
        prop_assert!((back.gain - g).abs() <= 1e-12 * g);
    }

    #[test]
    fn product_evaluates_pointwise(a in small_tf(), b in small_tf(), w in 1e-2..1e4f64) {
        prop_assume!(!near_root(w, &a) && !near_root(w, &b));
        let ab = a.mul(&b).unwrap();
        let want = a.eval(w).unwrap() * b.eval(w).unwrap();
        let got = ab.eval(w).unwrap();
        prop_assert!((got - want).norm() <= 1e-9 * want.norm().max(1e-300), "{got} vs {want}");
    }

    #[test]
    fn reflected_allpass_has_unit_modulus(z in root_set(4), w in 0.0..1e6f64) {
        let rhp: Vec<Complex64> = z.iter().map(|r| c(r.re.abs(), r.im)).collect();
        let refl: Vec<Complex64> = rhp.iter().map(|r| -r.conj()).collect();
        let mut num = poly::from_roots(&rhp);
        if rhp.len() % 2 == 1 {
            num = poly::neg(&num);
        }
        let ap = RationalTf::new(num, poly::from_roots(&refl)).unwrap();
        prop_assert!((ap.eval(w).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feedback_matches_pointwise_formula(l in small_tf(), w in 1e-2..1e4f64) {
        prop_assume!(!near_root(w, &l));
        let t = l.unity_feedback(&RationalTf::one()).unwrap();
        prop_assume!(!near_root(w, &t));
        // a near-coincident root pair cancelled under the 1e-7 tolerance
        // legitimately moves the function by that much
        prop_assume!(t.num_degree() == l.num_degree());
        let lv = l.eval(w).unwrap();
        let want = lv / (1.0 + lv);
        let got = bode(&t, &[w]).unwrap().points()[0].value;
        prop_assert!((got - want).norm() <= 1e-8 * want.norm(), "{got} vs {want}");
    }
}
