use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;

use credence_core::agents::{
    best_response_choice, build_agents, consumer_expected_payoff, plan_decision, AgentKind, AgentSpec, Objective,
};
use credence_core::config::MarketConfig;
use credence_core::market::{
    consumer_payoff, expert_margin, legal_actions, resolve_round, Condition, ConsumerChoice, Decision, ExpertPlan,
    FraudFlags, Institution, LabelPermutation, PriceBook, Problem, RoundInputs, RoundRecord, Treatment,
};
use credence_core::metrics::{aggregate, efficiency, ols, run_totals, welch_t, Accumulator};
use credence_core::money::Money;
use credence_core::rng::{Purpose, RngTree};
use credence_core::sim::run_market;

const INSTITUTIONS: [Institution; 3] = [Institution::NoInstitution, Institution::Verifiability, Institution::Liability];

fn institution() -> impl Strategy<Value = Institution> {
    prop::sample::select(INSTITUTIONS.to_vec())
}

fn any_book() -> impl Strategy<Value = PriceBook> {
    (1u32..=11, 1u32..=11).prop_map(|(a, b)| PriceBook { low: a.min(b), high: a.max(b) })
}

fn condition(config: &MarketConfig) -> Condition {
    Condition {
        institution: config.institution,
        reputation: config.reputation,
        rounds: config.rounds,
        expert_objectives: vec![Objective::Default; config.n_experts],
    }
}

/// A random round in which every plan is legal.
fn random_inputs(config: &MarketConfig, seed: u64) -> RoundInputs {
    let mut rng = RngTree::new(seed).stream(0, 1, Purpose::ExpertAgent, 0);
    let books: Vec<PriceBook> = (0..config.n_experts)
        .map(|_| {
            let (a, b) = (rng.random_range(1..=11), rng.random_range(1..=11));
            PriceBook { low: a.min(b), high: a.max(b) }
        })
        .collect();
    let problems: Vec<Problem> =
        (0..config.n_consumers).map(|_| if rng.random_bool(0.5) { Problem::Big } else { Problem::Small }).collect();
    let plans = books
        .iter()
        .map(|&b| ExpertPlan {
            decisions: problems
                .iter()
                .map(|&p| *legal_actions(config.institution, p, b).choose(&mut rng).unwrap())
                .collect(),
        })
        .collect();
    let choices = (0..config.n_consumers)
        .map(|_| {
            let k = rng.random_range(0..=config.n_experts);
            if k == config.n_experts {
                ConsumerChoice::Exit
            } else {
                ConsumerChoice::Approach(k)
            }
        })
        .collect();
    RoundInputs {
        run: 0,
        round: 1,
        condition: condition(config),
        problems,
        price_books: books,
        plans,
        choices,
        label_permutation: LabelPermutation::identity(config.n_experts),
    }
}

fn market(institution: Institution, human: bool) -> MarketConfig {
    let c = MarketConfig { institution, ..MarketConfig::default() };
    if human {
        c.human_comparison()
    } else {
        c
    }
}

fn surplus(d: Decision, p: Problem, config: &MarketConfig) -> Money {
    let gross = if d.treatment == Treatment::Hct || p == Problem::Small { config.value_solved } else { Money::ZERO };
    gross - config.cost(d.treatment)
}

proptest! {
    #[test]
    fn money_is_conserved(inst in institution(), human in any::<bool>(), seed in any::<u64>()) {
        let config = market(inst, human);
        let r = resolve_round(random_inputs(&config, seed), &config).unwrap();
        let mut total = Money::ZERO;
        for t in &r.trades {
            let p = r.problems[t.consumer];
            prop_assert_eq!(r.consumer_payoffs[t.consumer] + expert_margin(t.decision, &config), surplus(t.decision, p, &config));
            total += surplus(t.decision, p, &config);
        }
        let exits = r.choices.iter().filter(|c| c.expert().is_none()).count() as i64;
        let idle = (0..config.n_experts).filter(|&e| r.consumers_of(e) == 0).count() as i64;
        prop_assert_eq!(r.total_income(), total + config.consumer_outside * exits + config.expert_outside * idle);
    }

    #[test]
    fn institutional_guarantees_hold_on_every_trade(inst in institution(), seed in any::<u64>()) {
        let config = market(inst, false);
        let r = resolve_round(random_inputs(&config, seed), &config).unwrap();
        for t in &r.trades {
            let book = r.price_books[t.expert];
            match inst {
                Institution::Liability if r.problems[t.consumer] == Problem::Big => {
                    prop_assert_eq!(t.decision.treatment, Treatment::Hct)
                }
                Institution::Verifiability => {
                    let posted = if t.decision.treatment == Treatment::Hct { book.high } else { book.low };
                    prop_assert_eq!(t.decision.charge, posted);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn resolver_rejects_illegal_plans(
        inst in prop::sample::select(vec![Institution::Verifiability, Institution::Liability]),
        seed in any::<u64>(),
        expert in 0usize..4,
        consumer in 0usize..4,
    ) {
        let config = market(inst, false);
        let mut inputs = random_inputs(&config, seed);
        let book = inputs.price_books[expert];
        prop_assume!(!book.is_degenerate() || inst == Institution::Liability);
        let illegal = match inst {
            Institution::Verifiability => Decision::new(Treatment::Lct, book.high),
            _ => {
                inputs.problems[consumer] = Problem::Big;
                // keep the rest of the plans legal for the new problem
                for (e, plan) in inputs.plans.iter_mut().enumerate() {
                    plan.decisions[consumer] = Decision::new(Treatment::Hct, inputs.price_books[e].high);
                }
                Decision::new(Treatment::Lct, book.low)
            }
        };
        inputs.plans[expert].decisions[consumer] = illegal;
        prop_assert!(resolve_round(inputs, &config).is_err());
    }

    #[test]
    fn dominated_books_do_not_change_the_choice(
        inst in institution(),
        offers in prop::collection::vec(any_book(), 1..6),
        extra in any_book(),
        seed in any::<u64>(),
    ) {
        let config = market(inst, false);
        let best = offers.iter().map(|&b| consumer_expected_payoff(b, inst, &config)).fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(consumer_expected_payoff(extra, inst, &config) < best - 1e-9);
        let tree = RngTree::new(seed);
        let before = best_response_choice(&offers, inst, &config, &mut tree.stream(0, 1, Purpose::ConsumerTieBreak, 0));
        let mut more = offers.clone();
        more.push(extra);
        let after = best_response_choice(&more, inst, &config, &mut tree.stream(0, 1, Purpose::ConsumerTieBreak, 0));
        prop_assert_eq!(before, after);
    }

    #[test]
    fn consumer_beliefs_match_self_interested_plans(inst in institution(), book in any_book(), h in 0.05f64..0.95) {
        let config = MarketConfig { institution: inst, h_big: h, ..MarketConfig::default() };
        let realized = |p: Problem| {
            let d = plan_decision(Objective::SelfInterested, p, book, inst, &config);
            consumer_payoff(p, Some(d), &config).as_f64()
        };
        let expected = h * realized(Problem::Big) + (1.0 - h) * realized(Problem::Small);
        let believed = consumer_expected_payoff(book, inst, &config);
        prop_assert!((expected - believed).abs() < 1e-9, "{} vs {}", expected, believed);
    }

    #[test]
    fn welch_is_antisymmetric(
        a in prop::collection::vec(-100.0f64..100.0, 2..30),
        b in prop::collection::vec(-100.0f64..100.0, 2..30),
    ) {
        match (welch_t(&a, &b), welch_t(&b, &a)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x.t + y.t).abs() <= 1e-12 * x.t.abs().max(1.0));
                prop_assert!((x.p - y.p).abs() <= 1e-12);
                prop_assert!((x.df - y.df).abs() <= 1e-9 * x.df);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "only one direction failed"),
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal(rows in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -50.0f64..50.0), 8..80)) {
        let x: Vec<Vec<f64>> = rows.iter().map(|&(a, b, _)| vec![1.0, a, b, a * b]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let Ok(fit) = ols(&x, &y, &["const", "a", "b", "ab"], None) else { return Ok(()) };
        let e_norm = fit.residuals.iter().map(|e| e * e).sum::<f64>().sqrt();
        prop_assume!(e_norm > 1e-6);
        for j in 0..4 {
            let dot: f64 = x.iter().zip(&fit.residuals).map(|(r, e)| r[j] * e).sum();
            let norm = x.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
            prop_assert!(dot.abs() / (norm * e_norm) <= 1e-9);
        }
    }

    #[test]
    fn efficiency_is_affine(income in -50.0f64..50.0, scale in 0.1f64..10.0, shift in -20.0f64..20.0) {
        let e = efficiency(income, 6.4, 24.0).unwrap();
        let moved = efficiency(scale * income + shift, scale * 6.4 + shift, scale * 24.0 + shift).unwrap();
        prop_assert!((e - moved).abs() < 1e-9);
    }
}

fn random_records(seed: u64, runs: u32, inst: Institution) -> (MarketConfig, Vec<RoundRecord>) {
    let config = MarketConfig { institution: inst, rounds: 16, seed, ..MarketConfig::default() }.with_uniform_agents(
        AgentSpec::new(AgentKind::Random, Objective::Default),
        AgentSpec::new(AgentKind::Random, Objective::Default),
    );
    let mut records = Vec::new();
    for run in 0..runs {
        let mut agents = build_agents(&config, run, None).unwrap();
        records.extend(run_market(&config, run, &mut agents).unwrap().records);
    }
    (config, records)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn streaming_and_batch_rates_agree(seed in any::<u64>(), runs in 1u32..4, inst in institution()) {
        let (config, records) = random_records(seed, runs, inst);
        let mut acc = Accumulator::new();
        for r in &records {
            acc.push(r);
        }
        prop_assert_eq!(acc.finish(&config), aggregate(&records, &config));
    }

    #[test]
    fn efficiency_from_periods_equals_efficiency_from_run_means(seed in any::<u64>(), runs in 1u32..4) {
        let (config, records) = random_records(seed, runs, Institution::NoInstitution);
        let by_period = aggregate(&records, &config).efficiency.unwrap();
        let totals = run_totals(&records);
        let mean_of_runs = totals.iter().map(|(_, t)| t / 16.0).sum::<f64>() / totals.len() as f64;
        let by_run = efficiency(mean_of_runs, config.baseline_income().as_f64(), config.max_expected_income()).unwrap();
        prop_assert!((by_period - by_run).abs() < 1e-12);
    }
}

#[test]
fn efficiency_loving_experts_never_under_treat() {
    for inst in INSTITUTIONS {
        let config = market(inst, false);
        for book in config.grid().books() {
            let d = plan_decision(Objective::EfficiencyLoving, Problem::Big, book, inst, &config);
            assert_eq!(d.treatment, Treatment::Hct, "{inst} {book}");
        }
    }
}

/// Each consumer either exits or trades under a treatment rule (one
/// treatment per problem type). The best expected total is 24 and only
/// all-trade, all-honest profiles reach it.
#[test]
fn maximum_expected_income_is_attained_only_by_honest_full_trade() {
    let config = MarketConfig::default();
    let rules: Vec<Option<(Treatment, Treatment)>> = std::iter::once(None)
        .chain(
            [Treatment::Hct, Treatment::Lct]
                .into_iter()
                .flat_map(|b| [Treatment::Hct, Treatment::Lct].into_iter().map(move |s| Some((b, s)))),
        )
        .collect();
    let value = |rule: Option<(Treatment, Treatment)>| -> f64 {
        match rule {
            None => consumer_payoff(Problem::Big, None, &config).as_f64(),
            Some((b, s)) => [(Problem::Big, b), (Problem::Small, s)]
                .into_iter()
                .map(|(p, t)| {
                    let d = Decision::new(t, 5);
                    0.5 * (consumer_payoff(p, Some(d), &config) + expert_margin(d, &config)).as_f64()
                })
                .sum(),
        }
    };
    let honest = Some((Treatment::Hct, Treatment::Lct));
    let mut best = f64::NEG_INFINITY;
    for i in 0..rules.len().pow(4) {
        let profile: Vec<_> = (0..4).map(|k| rules[i / rules.len().pow(k) % rules.len()]).collect();
        // experts with no customer keep their outside option of zero
        let total: f64 = profile.iter().map(|&r| value(r)).sum();
        best = best.max(total);
        if (total - 24.0).abs() < 1e-9 {
            assert!(profile.iter().all(|&r| r == honest), "{profile:?}");
        }
    }
    assert_eq!(best, 24.0);
    assert_eq!(config.max_expected_income(), 24.0);
}

#[test]
fn fraud_denominators_use_the_matching_problem_type() {
    let config = MarketConfig::default();
    let book = PriceBook { low: 3, high: 7 };
    let lct_high = Decision::new(Treatment::Lct, 7);
    let hct_high = Decision::new(Treatment::Hct, 7);
    // consumer 0 and 1 big, 2 and 3 small
    let problems = vec![Problem::Big, Problem::Big, Problem::Small, Problem::Small];
    let plans = vec![
        ExpertPlan { decisions: vec![lct_high, hct_high, hct_high, hct_high] },
        ExpertPlan { decisions: vec![hct_high; 4] },
        ExpertPlan { decisions: vec![hct_high; 4] },
        ExpertPlan { decisions: vec![hct_high; 4] },
    ];
    let r = resolve_round(
        RoundInputs {
            run: 0,
            round: 1,
            condition: condition(&config),
            problems,
            price_books: vec![book; 4],
            plans,
            choices: vec![ConsumerChoice::Approach(0); 4],
            label_permutation: LabelPermutation::identity(4),
        },
        &config,
    )
    .unwrap();
    assert_eq!(
        r.fraud_intended[0][0],
        FraudFlags { under_treatment: true, over_treatment: false, over_charging: true }
    );
    let s = aggregate(&[r], &config);
    // 1 of 8 big cells, 8 of 8 small cells, 1 of 16 cells
    assert_eq!(s.under_treatment_intended, Some(1.0 / 8.0));
    assert_eq!(s.over_treatment_intended, Some(1.0));
    assert_eq!(s.overcharging_intended, Some(1.0 / 16.0));
    // realized: expert 0 treats all four
    assert_eq!(s.under_treatment_realized, Some(0.5));
    assert_eq!(s.over_treatment_realized, Some(1.0));
    assert_eq!(s.overcharging_realized, Some(0.25));
}

#[test]
fn scripted_runs_are_deterministic() {
    let (_, a) = random_records(99, 2, Institution::Verifiability);
    let (_, b) = random_records(99, 2, Institution::Verifiability);
    assert_eq!(a, b);
}
