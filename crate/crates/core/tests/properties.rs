mod common;

use common::fixtures::{self, rng};
use common::semantics::dense_trace;
use concolic_dnn::engine::quantize_away;
use concolic_dnn::engine::suite::{Provenance, TestSuite};
use concolic_dnn::l0::{symbolic_l0, L0Budget};
use concolic_dnn::lipschitz::{compass_minimize, lip_ratio, CompassConfig};
use concolic_dnn::logic::{gen_nc, Status, Tag};
use concolic_dnn::oracle::{validity_check, ReferenceSet};
use concolic_dnn::ranking::{rank_nc, LayerFactors, LipMetric};
use concolic_dnn::{Layer, Network, Norm};
use proptest::prelude::*;

fn net_strategy() -> impl Strategy<Value = (u64, Vec<usize>)> {
    (
        any::<u64>(),
        prop::collection::vec(1usize..9, 2..4),
        2usize..5,
    )
        .prop_map(|(seed, mut widths, out)| {
            widths.push(out);
            (seed, widths)
        })
}

fn build((seed, widths): &(u64, Vec<usize>)) -> Network {
    fixtures::random_dense(&mut rng(*seed), widths, 0.5)
}

fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn forward_pass_matches_reference_trace(spec in net_strategy(), x in unit_vec(8)) {
        let net = build(&spec);
        let x = &x[..net.input_dim()];
        let acts = net.forward(x).unwrap();
        let trace = dense_trace(&net, x);
        let pattern = acts.pattern();
        for n in net.relu_neurons() {
            let u = trace.pre[n.layer - 1][n.index];
            prop_assert!((acts.pre(n) - u).abs() <= 1e-12 * (1.0 + u.abs()));
            prop_assert_eq!(pattern.get(n), Some(acts.pre(n) >= 0.0));
            prop_assert_eq!(acts.post(n), acts.pre(n).max(0.0));
        }
        let out = trace.pre.last().unwrap();
        for (a, b) in acts.output().iter().zip(out) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn label_survives_positive_output_scaling(spec in net_strategy(), x in unit_vec(8), s in 0.01f64..100.0) {
        let net = build(&spec);
        let x = &x[..net.input_dim()];
        let mut layers = net.layers().to_vec();
        if let Some(Layer::Dense { weights, bias, .. }) = layers.last_mut() {
            weights.iter_mut().flatten().for_each(|w| *w *= s);
            bias.iter_mut().for_each(|b| *b *= s);
        }
        let scaled = Network::new(net.input_shape().to_vec(), layers).unwrap();
        let (a, b) = (net.forward(x).unwrap(), scaled.forward(x).unwrap());
        // scaling can only change the label if two logits were (near) tied
        let mut sorted = a.output().to_vec();
        sorted.sort_by(|p, q| q.total_cmp(p));
        prop_assume!(sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(net.label(x).unwrap(), scaled.label(x).unwrap());
        prop_assert_eq!(a.pattern(), b.pattern());
    }

    #[test]
    fn nc_ranking_is_the_exhaustive_argmax(
        spec in net_strategy(),
        tests in prop::collection::vec(unit_vec(8), 1..10),
        closed in prop::collection::vec(any::<bool>(), 32),
    ) {
        let net = build(&spec);
        let suite: Vec<Vec<f64>> = tests.iter().map(|t| t[..net.input_dim()].to_vec()).collect();
        let acts: Vec<_> = suite.iter().map(|x| net.forward(x).unwrap()).collect();
        let factors = LayerFactors::estimate(&net, &acts).unwrap();
        let mut reqs = gen_nc(&net);
        for (r, &c) in reqs.iter_mut().zip(&closed) {
            if c {
                r.status = Status::Satisfied;
            }
        }
        let got = rank_nc(&acts, &reqs, &factors, |_, _| false);

        let traces: Vec<_> = suite.iter().map(|x| dense_trace(&net, x)).collect();
        let mut want: Option<(f64, usize, usize)> = None;
        for (ri, r) in reqs.iter().enumerate() {
            let Tag::Nc { neuron } = r.tag else { continue };
            if r.status != Status::Open {
                continue;
            }
            for (ti, tr) in traces.iter().enumerate() {
                let score = factors.get(neuron.layer) * tr.pre[neuron.layer - 1][neuron.index];
                if want.is_none_or(|(s, _, _)| score > s) {
                    want = Some((score, ri, ti));
                }
            }
        }
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((s, ri, ti))) => {
                prop_assert_eq!(g.requirement, ri);
                prop_assert_eq!(g.witnesses, vec![ti]);
                prop_assert!((g.score - s).abs() <= 1e-12 * (1.0 + s.abs()));
            }
            (g, w) => prop_assert!(false, "ranking {:?} vs exhaustive {:?}", g, w),
        }
    }

    #[test]
    fn pixel_search_stays_within_budget(spec in net_strategy(), x in unit_vec(8), pick in any::<prop::sample::Index>(), budget in 1usize..4) {
        let net = build(&spec);
        let x = &x[..net.input_dim()];
        let neurons = net.relu_neurons();
        prop_assume!(!neurons.is_empty());
        let n = neurons[pick.index(neurons.len())];
        if let Some(found) = symbolic_l0(&net, x, &Tag::Nc { neuron: n }, &L0Budget::pixels(budget)).unwrap() {
            prop_assert!(found.changed.len() <= budget);
            let differing = found.input.iter().zip(x).filter(|(a, b)| a != b).count();
            prop_assert!(differing <= found.changed.len());
            prop_assert!(net.forward(&found.input).unwrap().pre(n) >= 0.0);
        }
    }

    #[test]
    fn validity_is_monotone_in_the_bound(
        refs in prop::collection::vec(unit_vec(4), 1..5),
        t in unit_vec(4),
        b1 in 0.0f64..1.0,
        extra in 0.0f64..1.0,
    ) {
        let refs = ReferenceSet::unlabelled(refs).unwrap();
        for norm in [Norm::Linf, Norm::L0] {
            let (small, large) = match norm {
                Norm::L0 => ((b1 * 4.0).floor(), (b1 * 4.0).floor() + (extra * 4.0).floor()),
                _ => (b1, b1 + extra),
            };
            if validity_check(&refs, &t, small, norm) {
                prop_assert!(validity_check(&refs, &t, large, norm));
            }
        }
    }

    #[test]
    fn lipschitz_ratio_is_symmetric(spec in net_strategy(), a in unit_vec(8), b in unit_vec(8)) {
        let net = build(&spec);
        let d = net.input_dim();
        for metric in [LipMetric::default(), LipMetric { norm: Norm::L2, ..LipMetric::default() }] {
            let r1 = lip_ratio(&net, &a[..d], &b[..d], 1e-9, metric).unwrap();
            let r2 = lip_ratio(&net, &b[..d], &a[..d], 1e-9, metric).unwrap();
            prop_assert!(r1 >= 0.0);
            prop_assert_eq!(r1, r2);
        }
    }

    #[test]
    fn compass_trace_descends_inside_the_box(
        centre in prop::collection::vec(-1.0f64..1.0, 1..5),
        start_frac in prop::collection::vec(0.0f64..=1.0, 5),
        width in 0.1f64..2.0,
    ) {
        let n = centre.len();
        let lower: Vec<f64> = vec![-width; n];
        let upper: Vec<f64> = vec![width; n];
        let start: Vec<f64> = start_frac[..n].iter().map(|f| -width + 2.0 * width * f).collect();
        let f = |x: &[f64]| {
            x.iter().zip(&centre).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
                + (3.0 * x[0]).sin()
        };
        let cfg = CompassConfig { sigma0: width / 4.0, theta: 0.5, sigma_min: 1e-5, max_iters: 150, max_evals: usize::MAX };
        let res = compass_minimize(f, &start, &lower, &upper, &cfg, |_, _| false);
        prop_assert_eq!(&res.trace[0], &start);
        let mut prev = f64::INFINITY;
        for p in &res.trace {
            prop_assert!(p.iter().zip(&lower).zip(&upper).all(|((v, lo), hi)| lo <= v && v <= hi));
            let v = f(p);
            prop_assert!(v <= prev);
            prev = v;
        }
        prop_assert_eq!(res.value, f(&res.best));
        prop_assert!(res.iterations <= 150);
    }

    #[test]
    fn directional_rounding_lands_on_the_grid_and_never_closer(
        anchor in unit_vec(6).prop_map(|a| a.iter().map(|v| (v * 255.0).round() / 255.0).collect::<Vec<_>>()),
        x in unit_vec(6),
    ) {
        let q = quantize_away(&x, &anchor, 255);
        for ((qi, xi), ai) in q.iter().zip(&x).zip(&anchor) {
            prop_assert!(((qi * 255.0) - (qi * 255.0).round()).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(qi));
            if (xi - ai).abs() > 1e-9 {
                prop_assert!((qi - ai).abs() >= (xi - ai).abs() - 1e-9 || *qi == 0.0 || *qi == 1.0);
            }
        }
    }

    #[test]
    fn suites_round_trip_through_disk(
        inputs in prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 3), 1..12),
    ) {
        let mut s = TestSuite::new();
        for (i, x) in inputs.into_iter().enumerate() {
            let p = if i == 0 {
                Provenance::Seed
            } else {
                Provenance::Generated { requirement: format!("NC(2,{i})"), parent: i - 1 }
            };
            s.push(x, p).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        prop_assert_eq!(TestSuite::load(dir.path()).unwrap(), s);
    }
}
