use privauction::instances::prepare;
use privauction::mechanism::{fair_inner_product_exact, ghosh_roth_special_case, run_auction_exact};
use privauction::{run_auction, AuctionInstance, Branch, Error, FilterMode, Rational, Scalar, ValueInterval};
use proptest::prelude::*;

fn q(x: f64) -> Rational {
    Rational::from_f64(x)
}

fn integer_instance(max_n: usize) -> impl Strategy<Value = AuctionInstance> {
    (2..=max_n)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((1..=6i32, any::<bool>()), n),
                prop::collection::vec(0..=8i32, n),
                1..=20i32,
            )
        })
        .prop_map(|(w, v, b)| {
            let w = w.into_iter().map(|(m, neg)| if neg { -m as f64 } else { m as f64 }).collect();
            let v = v.into_iter().map(f64::from).collect();
            AuctionInstance::new(w, v, b as f64, ValueInterval::unit()).unwrap()
        })
}

fn real_instance(max_n: usize) -> impl Strategy<Value = AuctionInstance> {
    (2..=max_n)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0.1f64..10.0, any::<bool>()), n),
                prop::collection::vec(0.0f64..10.0, n),
                0.5f64..20.0,
            )
        })
        .prop_map(|(w, v, b)| {
            let w = w.into_iter().map(|(m, neg)| if neg { -m } else { m }).collect();
            AuctionInstance::new(w, v, b, ValueInterval::unit()).unwrap()
        })
}

struct Reference {
    selected: Vec<usize>,
    payments: Vec<Rational>,
    k: usize,
    i_star: usize,
    branch: Branch,
    r: Option<usize>,
}

/// The selection rule written out directly over a canonical instance.
fn reference(inst: &AuctionInstance) -> Reference {
    let n = inst.len();
    let w: Vec<Rational> = inst.weights().iter().map(|&x| q(x).abs()).collect();
    let v: Vec<Rational> = inst.unit_costs().iter().map(|&x| q(x)).collect();
    let b = q(inst.budget());
    let total = w.iter().fold(Rational::zero(), |a, x| a + x.clone());
    let prefix = |t: usize, skip: Option<usize>| {
        (0..t).filter(|&i| Some(i) != skip).fold(Rational::zero(), |a, i| a + w[i].clone())
    };

    // Largest 1-based t with B / w([t]) >= v_t / (W - w([t])); t = n never passes.
    let mut k = 0;
    for t in 1..n {
        let head = prefix(t, None);
        let rest = total.clone() - head.clone();
        if b.clone() * rest >= v[t - 1].clone() * head {
            k = t;
        }
    }
    let mut i_star = 0;
    for i in 1..n {
        if w[i] > w[i_star] {
            i_star = i;
        }
    }
    let others = prefix(k, Some(i_star));
    let mut payments = vec![Rational::zero(); n];
    if w[i_star] > others {
        // Thresholds recomputed without i*.
        let r = (0..n).filter(|&t| t != i_star).find(|&t| {
            let head = prefix(t + 1, Some(i_star));
            let rest = total.clone() - head.clone();
            b.clone() * rest >= v[t].clone() * head.clone() && head >= w[i_star]
        });
        payments[i_star] = match r {
            Some(r) => w[i_star].clone() * v[r].clone() / (total.clone() - w[i_star].clone()),
            None => b,
        };
        Reference { selected: vec![i_star], payments, k, i_star, branch: Branch::Star, r }
    } else {
        let head = prefix(k, None);
        let by_budget = b / head.clone();
        let by_cost = v[k].clone() / (total - head);
        let rate = if by_budget < by_cost { by_budget } else { by_cost };
        for i in 0..k {
            payments[i] = w[i].clone() * rate.clone();
        }
        Reference { selected: (0..k).collect(), payments, k, i_star, branch: Branch::TopK, r: None }
    }
}

proptest! {
    #[test]
    fn matches_reference_rule_exactly(inst in integer_instance(10)) {
        let Ok(p) = prepare(&inst, FilterMode::FixedPoint) else { return Ok(()) };
        let canon = p.canonical;
        let got = fair_inner_product_exact(&canon).unwrap();
        let want = reference(&canon);
        prop_assert_eq!(got.k, want.k);
        prop_assert_eq!(got.i_star, want.i_star);
        prop_assert_eq!(got.branch, want.branch);
        prop_assert_eq!(got.r, want.r);
        prop_assert_eq!(&got.selected, &want.selected);
        prop_assert_eq!(&got.payments, &want.payments);
    }

    #[test]
    fn exact_budget_and_rationality(inst in integer_instance(12)) {
        let Ok(p) = prepare(&inst, FilterMode::FixedPoint) else { return Ok(()) };
        let canon = p.canonical;
        let sel = fair_inner_product_exact(&canon).unwrap();
        let w: Vec<Rational> = canon.abs_weights().into_iter().map(q).collect();
        let total = sel.payments.iter().fold(Rational::zero(), |a, x| a + x.clone());
        prop_assert!(total <= q(canon.budget()));
        let residual = (0..canon.len())
            .filter(|i| !sel.selected.contains(i))
            .fold(Rational::zero(), |a, i| a + w[i].clone());
        prop_assert!(residual > Rational::zero());
        for i in 0..canon.len() {
            if sel.selected.contains(&i) {
                let cost = q(canon.unit_costs()[i]) * w[i].clone() / residual.clone();
                prop_assert!(sel.payments[i] >= cost);
            } else {
                prop_assert!(sel.payments[i].is_zero());
            }
        }
    }

    #[test]
    fn float_and_exact_agree_on_small_integers(inst in integer_instance(12)) {
        match (run_auction(&inst, FilterMode::FixedPoint), run_auction_exact(&inst, FilterMode::FixedPoint)) {
            (Ok(f), Ok(e)) => {
                prop_assert_eq!(&f.selected, &e.selected);
                prop_assert_eq!(f.branch, e.branch);
                for (a, b) in f.payments.iter().zip(&e.payments) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
            (Err(Error::EmptyInstance), Err(Error::EmptyInstance)) => {}
            (f, e) => prop_assert!(false, "float {f:?} vs exact {e:?}"),
        }
    }

    #[test]
    fn internal_invariants_never_fire(inst in real_instance(14)) {
        match run_auction(&inst, FilterMode::FixedPoint) {
            Ok(_) | Err(Error::EmptyInstance) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn outcome_is_deterministic_and_sign_blind(inst in real_instance(12), flips in prop::collection::vec(any::<bool>(), 12)) {
        let Ok(a) = run_auction(&inst, FilterMode::FixedPoint) else { return Ok(()) };
        let b = run_auction(&inst, FilterMode::FixedPoint).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

        let flipped: Vec<f64> = inst.weights().iter().zip(&flips).map(|(&w, &f)| if f { -w } else { w }).collect();
        let c = run_auction(&inst.with_weights(flipped).unwrap(), FilterMode::FixedPoint).unwrap();
        prop_assert_eq!(&a.selected, &c.selected);
        prop_assert_eq!(&a.payments, &c.payments);
    }

    #[test]
    fn uniform_weights_buy_the_cheapest_prefix(
        n in 2usize..10,
        mut costs in prop::collection::vec(0.0f64..5.0, 10),
        budget in 0.5f64..30.0,
        weight in 0.5f64..3.0,
    ) {
        costs.truncate(n);
        costs.sort_by(f64::total_cmp);
        let inst = AuctionInstance::new(vec![weight; n], costs, budget, ValueInterval::unit()).unwrap();
        let Ok(p) = prepare(&inst, FilterMode::FixedPoint) else { return Ok(()) };
        let out = ghosh_roth_special_case(&p.canonical).unwrap();
        let k = out.selection.k;
        prop_assert_eq!(out.selected().to_vec(), (0..k).collect::<Vec<_>>());
    }
}

#[test]
fn reference_reproduces_hand_traces() {
    let hard = AuctionInstance::new(vec![1.0; 4], vec![1.0, 2.0, 2.0, 2.0], 1.5, ValueInterval::unit()).unwrap();
    let r = reference(&hard);
    assert_eq!((r.k, r.i_star, r.branch, r.r), (1, 0, Branch::Star, Some(1)));
    assert_eq!(r.payments[0], Rational::new(2, 3));

    let flat = AuctionInstance::new(vec![1.0; 3], vec![1.0; 3], 10.0, ValueInterval::unit()).unwrap();
    let r = reference(&flat);
    assert_eq!(r.k, 2);
    assert_eq!(r.payments, vec![Rational::from_integer(1), Rational::from_integer(1), Rational::zero()]);
}
