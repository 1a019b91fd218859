use horolab_core::dynamics::flow;
use horolab_core::product::{cartan_vector, jordan_vector, GroupElement};
use horolab_core::quasimetric::{qdist, NilFactor, StratifiedSpace};
use horolab_core::product::ChamberVector;
use horolab_core::rank_one::{act_on_angle, angle_distance, FactorElement, Mat2};
use horolab_core::schottky::{enumerate_words, reference_self_joining, word_count, Word};
use proptest::prelude::*;

fn element() -> impl Strategy<Value = FactorElement> {
    (-3.2f64..3.2, 0.0f64..5.0, -3.2f64..3.2).prop_map(|(a, t, b)| {
        FactorElement::rotation(a) * FactorElement::diagonal(t) * FactorElement::rotation(b)
    })
}

proptest! {
    #[test]
    fn action_is_a_left_action(g in element(), h in element(), th in 0.0f64..std::f64::consts::PI) {
        let lhs = act_on_angle(&(g * h), th);
        let rhs = act_on_angle(&g, act_on_angle(&h, th));
        prop_assert!(angle_distance(lhs, rhs) < 1e-8);
    }

    #[test]
    fn cartan_is_inverse_invariant_and_dominates_jordan(g in element(), h in element()) {
        let x = GroupElement::new(vec![g, h]);
        let mu = cartan_vector(&x);
        let mu_inv = cartan_vector(&x.inverse());
        let lam = jordan_vector(&x);
        for i in 0..2 {
            prop_assert!((mu[i] - mu_inv[i]).abs() < 1e-9);
            prop_assert!(lam[i] <= mu[i] + 1e-9);
        }
    }

    #[test]
    fn normalize_fixes_determinant(a in 0.2f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in 0.2f64..3.0) {
        prop_assume!(a * d - b * c > 1e-3);
        let g = FactorElement::normalize(Mat2::new(a, b, c, d)).unwrap();
        prop_assert!((g.matrix().det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flow_is_a_one_parameter_group(v0 in 0.1f64..2.0, v1 in 0.1f64..2.0, s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let v = [v0, v1];
        let lhs = flow(&v, s) * flow(&v, t);
        prop_assert!(lhs.dist(&flow(&v, s + t)) < 1e-9);
    }

    #[test]
    fn quasimetric_is_symmetric(p in proptest::collection::vec(-2.0f64..2.0, 4), q in proptest::collection::vec(-2.0f64..2.0, 4), v0 in 0.2f64..2.0) {
        let space = StratifiedSpace::new(vec![NilFactor::Abelian(1), NilFactor::Heisenberg]);
        let v = ChamberVector::interior(vec![v0, 1.0]).unwrap();
        let d = qdist(&space, &v, &p, &q).unwrap();
        prop_assert!((d - qdist(&space, &v, &q, &p).unwrap()).abs() <= 1e-12 * d.max(1.0));
        prop_assert_eq!(qdist(&space, &v, &p, &p).unwrap(), 0.0);
    }
}

#[test]
fn enumeration_matches_count_and_is_reduced() {
    let s = reference_self_joining(true).unwrap();
    let words: Vec<_> = enumerate_words(&s, 5).unwrap().collect();
    assert_eq!(words.len() as u64, word_count(2, 5));
    assert!(words.iter().all(|(w, _)| Word::is_reduced(&w.0)));
    for (w, g) in words.iter().take(200) {
        assert!(s.evaluate(&w.0).dist(g) < 1e-9);
    }
}
