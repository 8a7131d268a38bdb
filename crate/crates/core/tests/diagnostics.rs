use amgqp::diagnostics::{
    build_reference_set, contraction_check, contraction_violations, dominance_filter, gap, gap_from_values,
    lyapunov_discrete, merit_lower_bound, ReferencePoint, ReferenceSet, REFERENCE_RESIDUAL,
};
use amgqp::hullproj::kkt_residual;
use amgqp::problems::{eval_objectives, ProblemFamily, ProblemSpec, Quadratic};
use amgqp::rng::UniformStream;
use amgqp::solvers::{run_with, IterState, Method, MethodConfig, RunOptions};
use amgqp::Error;
use ndarray::{array, Array1};
use proptest::prelude::*;

fn point_ref(bundle: &Quadratic, x: Array1<f64>) -> ReferencePoint {
    ReferencePoint {
        values: eval_objectives(bundle, x.view()).unwrap().to_vec(),
        residual: kkt_residual(bundle, x.view()).unwrap(),
        x: x.to_vec(),
    }
}

fn pair() -> Quadratic {
    Quadratic::diagonal(vec![array![0.0, 0.0], array![2.0, 1.0]], vec![array![1.0, 2.0], array![3.0, 1.0]]).unwrap()
}

#[test]
fn gap_examples() {
    let bundle = pair();
    let x = array![0.5, -1.0];
    assert_eq!(gap(&bundle, x.view(), x.view()).unwrap(), 0.0);
    assert_eq!(gap_from_values(array![3.0, 1.0].view(), array![1.0, 2.0].view()), -1.0);

    let single = Quadratic::diagonal(vec![array![1.0]], vec![array![2.0]]).unwrap();
    let (x, z) = (array![3.0], array![0.5]);
    let fx = eval_objectives(&single, x.view()).unwrap()[0];
    let fz = eval_objectives(&single, z.view()).unwrap()[0];
    assert_eq!(gap(&single, x.view(), z.view()).unwrap(), fx - fz);
}

#[test]
fn merit_lower_bound_examples() {
    let bundle = pair();
    let x = array![1.0, 3.0];
    let own = ReferenceSet {
        points: vec![point_ref(&bundle, x.clone())],
    };
    assert_eq!(merit_lower_bound(&bundle, x.view(), &own).unwrap(), 0.0);

    let single = Quadratic::diagonal(vec![array![1.0, -1.0]], vec![array![2.0, 2.0]]).unwrap();
    let refs = ReferenceSet {
        points: vec![point_ref(&single, array![1.0, -1.0])],
    };
    let value = merit_lower_bound(&single, x.view(), &refs).unwrap();
    assert_eq!(value, eval_objectives(&single, x.view()).unwrap()[0]);
    assert!(value >= 0.0);

    let mut stream = UniformStream::new(4, "merit");
    let mut refs = ReferenceSet::default();
    let mut previous = f64::NEG_INFINITY;
    for _ in 0..10 {
        refs.points.push(point_ref(&bundle, Array1::from(stream.fill(2, -1.0, 3.0))));
        let value = merit_lower_bound(&bundle, x.view(), &refs).unwrap();
        assert!(value >= previous);
        for p in &refs.points {
            assert!(value >= gap(&bundle, x.view(), Array1::from(p.x.clone()).view()).unwrap());
        }
        previous = value;
    }

    assert!(matches!(
        merit_lower_bound(&bundle, x.view(), &ReferenceSet::default()),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn lyapunov_examples() {
    let bundle = pair();
    let x = array![0.3, 0.4];
    let at_rest = IterState {
        x: x.clone(),
        z: x.clone(),
        gamma: 2.0,
    };
    assert_eq!(lyapunov_discrete(&bundle, &at_rest, x.view()).unwrap(), 0.0);

    let z = array![1.0, 1.0];
    let state = IterState {
        x: x.clone(),
        z: array![-1.0, 2.0],
        gamma: 1.5,
    };
    let doubled = IterState {
        gamma: 3.0,
        ..state.clone()
    };
    let g = gap(&bundle, x.view(), z.view()).unwrap();
    let e1 = lyapunov_discrete(&bundle, &state, z.view()).unwrap();
    let e2 = lyapunov_discrete(&bundle, &doubled, z.view()).unwrap();
    assert!(((e2 - g) - 2.0 * (e1 - g)).abs() < 1e-14);

    // f = x², x = 2, z_k = 3, z = 1, γ = 0.5: (4 − 1) + 0.25·4 = 4.
    let single = Quadratic::diagonal(vec![array![0.0]], vec![array![2.0]]).unwrap();
    let state = IterState {
        x: array![2.0],
        z: array![3.0],
        gamma: 0.5,
    };
    assert_eq!(lyapunov_discrete(&single, &state, array![1.0].view()).unwrap(), 4.0);
}

#[test]
fn contraction_on_compliant_and_corrupted_runs() {
    let bundle = pair();
    let refs = build_reference_set(&bundle, 3, 100_000, 1).unwrap();
    let z = Array1::from(refs.points[0].x.clone());
    let config = MethodConfig::new(Method::AmgQp, 0.0, 3.0).with_max_iters(100);
    let mut trace = run_with(&bundle, &config, array![4.0, -3.0].view(), RunOptions { record_states: true }).unwrap();
    assert!(contraction_check(&bundle, &trace, z.view()).unwrap().is_empty());

    let empty = run_with(&bundle, &config.clone().with_max_iters(0), array![4.0, -3.0].view(), RunOptions { record_states: true }).unwrap();
    assert!(contraction_check(&bundle, &empty, z.view()).unwrap().is_empty());

    trace.states.as_mut().unwrap()[8].gamma *= 1e3;
    assert!(contraction_check(&bundle, &trace, z.view()).unwrap().contains(&7));

    let plain = run_with(&bundle, &config, array![4.0, -3.0].view(), RunOptions::default()).unwrap();
    assert!(contraction_check(&bundle, &plain, z.view()).is_err());

    assert_eq!(contraction_violations(&[1.0, 0.5, 0.9, 0.1], &[0.5, 0.5, 0.5]), vec![1]);
}

#[test]
fn dominance_examples() {
    let values = vec![array![1.0, 2.0], array![2.0, 1.0], array![2.0, 2.0]];
    assert_eq!(dominance_filter(&values), vec![0, 1]);
    let same = vec![array![1.0, 1.0]; 4];
    assert_eq!(dominance_filter(&same), vec![0, 1, 2, 3]);
    assert!(dominance_filter(&[]).is_empty());
}

fn brute_force(values: &[Array1<f64>]) -> Vec<usize> {
    let mut keep = Vec::new();
    for i in 0..values.len() {
        let mut dominated = false;
        for j in 0..values.len() {
            let le = (0..values[i].len()).all(|c| values[j][c] <= values[i][c]);
            let lt = (0..values[i].len()).any(|c| values[j][c] < values[i][c]);
            if le && lt {
                dominated = true;
            }
        }
        if !dominated {
            keep.push(i);
        }
    }
    keep
}

#[test]
fn dominance_matches_brute_force() {
    let mut stream = UniformStream::new(3, "dominance");
    let values: Vec<Array1<f64>> = (0..200).map(|_| Array1::from(stream.fill(2, 0.0, 1.0))).collect();
    assert_eq!(dominance_filter(&values), brute_force(&values));
}

proptest! {
    #[test]
    fn dominance_output_is_an_antichain(raw in prop::collection::vec(prop::collection::vec(0u8..5, 3), 0..40)) {
        let values: Vec<Array1<f64>> = raw.iter().map(|v| Array1::from_iter(v.iter().map(|&x| x as f64))).collect();
        let kept = dominance_filter(&values);
        prop_assert_eq!(&kept, &brute_force(&values));
        for &i in &kept {
            for &j in &kept {
                let strictly = values[j].iter().zip(&values[i]).all(|(a, b)| a <= b) && values[j] != values[i];
                prop_assert!(!strictly);
            }
        }
    }

    #[test]
    fn gap_is_a_minimum(x in prop::collection::vec(-3.0..3.0f64, 2), z in prop::collection::vec(-3.0..3.0f64, 2)) {
        let bundle = pair();
        let (x, z) = (Array1::from(x), Array1::from(z));
        let g = gap(&bundle, x.view(), z.view()).unwrap();
        let fx = eval_objectives(&bundle, x.view()).unwrap();
        let fz = eval_objectives(&bundle, z.view()).unwrap();
        for j in 0..2 {
            prop_assert!(g <= fx[j] - fz[j]);
        }
    }
}

#[test]
fn reference_set_examples() {
    let single = Quadratic::diagonal(vec![array![1.0, -2.0, 0.5]], vec![array![1.0, 2.0, 3.0]]).unwrap();
    let refs = build_reference_set(&single, 5, 10_000, 0).unwrap();
    assert_eq!(refs.points.len(), 1);
    let x = Array1::from(refs.points[0].x.clone());
    assert!((&x - &array![1.0, -2.0, 0.5]).iter().all(|d| d.abs() < 1e-8));

    let center = array![0.5, -0.5];
    let shared = Quadratic::diagonal(vec![center.clone(), center.clone()], vec![array![1.0, 4.0], array![3.0, 1.0]]).unwrap();
    let refs = build_reference_set(&shared, 6, 10_000, 2).unwrap();
    for p in &refs.points {
        assert!(p.residual <= REFERENCE_RESIDUAL);
        assert!((&Array1::from(p.x.clone()) - &center).iter().all(|d| d.abs() < 1e-6));
    }

    let bundle = ProblemSpec::new(ProblemFamily::Logsumexp, 1, 5, 5, 0.05).build().unwrap();
    let a = build_reference_set(bundle.as_ref(), 4, 20_000, 9).unwrap();
    let b = build_reference_set(bundle.as_ref(), 4, 20_000, 9).unwrap();
    assert_eq!(a, b);
    assert!(!a.points.is_empty());
    let text = a.to_json().unwrap();
    assert_eq!(ReferenceSet::from_json(&text).unwrap(), a);

    assert!(matches!(build_reference_set(bundle.as_ref(), 2, 1, 9), Err(Error::EmptyReference)));
}
