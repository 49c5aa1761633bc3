//! Drives agents through the round lifecycle and collects the run log.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentError, AgentSet, ConsumerHistoryEntry, ConsumerView, DisplayedOffer, ExpertHistoryEntry, ExpertView,
    OfferChoice,
};
use crate::config::MarketConfig;
use crate::market::{
    draw_problems, make_label_permutation, resolve_round, Condition, ConsumerChoice, ExpertPlan, MarketError,
    PriceBook, RoundInputs, RoundRecord,
};
use crate::rng::{Purpose, RngTree};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("run {run} round {round}: {role} {index} failed: {source}")]
    Agent {
        run: u32,
        round: u32,
        role: &'static str,
        index: usize,
        #[source]
        source: AgentError,
    },
    #[error("run {run} round {round}: {source}")]
    Market {
        run: u32,
        round: u32,
        #[source]
        source: MarketError,
    },
    #[error("expected {expected} {role} agents, got {found}")]
    AgentCount { role: &'static str, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComprehensionAnswer {
    pub run: u32,
    pub agent: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub run: u32,
    pub records: Vec<RoundRecord>,
    pub comprehension: Vec<ComprehensionAnswer>,
}

/// A run that stopped early; `partial` holds every completed round.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: RunLog,
    pub error: SimError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} completed rounds kept)", self.error, self.partial.records.len())
    }
}

impl std::error::Error for RunFailure {}

/// Runs `f` over every item, concurrently when `parallel` is set. Results
/// keep item order and all calls finish before this returns.
fn stage<T: Send, R: Send>(items: &mut [T], parallel: bool, f: impl Fn(usize, &mut T) -> R + Sync) -> Vec<R> {
    if !parallel {
        return items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = items.iter_mut().enumerate().map(|(i, t)| s.spawn(move || f(i, t))).collect();
        handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
    })
}

fn first_error<R>(
    results: Vec<Result<R, AgentError>>,
    run: u32,
    round: u32,
    role: &'static str,
) -> Result<Vec<R>, SimError> {
    let mut out = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|source| SimError::Agent { run, round, role, index, source })?);
    }
    Ok(out)
}

struct Market<'a> {
    config: &'a MarketConfig,
    run: u32,
    tree: RngTree,
    expert_history: Vec<Vec<ExpertHistoryEntry>>,
    consumer_history: Vec<Vec<ConsumerHistoryEntry>>,
}

impl Market<'_> {
    fn expert_view(&self, expert: usize, round: u32) -> ExpertView {
        ExpertView {
            expert,
            round,
            rounds: self.config.rounds,
            institution: self.config.institution,
            reputation: self.config.reputation,
            history: self.expert_history[expert].clone(),
        }
    }

    fn consumer_view(&self, consumer: usize, round: u32, offers: &[DisplayedOffer]) -> ConsumerView {
        ConsumerView {
            consumer,
            round,
            rounds: self.config.rounds,
            institution: self.config.institution,
            reputation: self.config.reputation,
            offers: offers.to_vec(),
            history: self.consumer_history[consumer].clone(),
        }
    }

    fn comprehension(&self, agents: &mut AgentSet) -> Result<Vec<ComprehensionAnswer>, SimError> {
        let run = self.run;
        let mut out = Vec::new();
        let remote = agents.experts.iter().any(|a| a.is_remote());
        let views: Vec<ExpertView> = (0..agents.experts.len()).map(|e| self.expert_view(e, 0)).collect();
        let answers = stage(&mut agents.experts, remote, |i, a| a.comprehension(&views[i]));
        for (i, a) in first_error(answers, run, 0, "expert")?.into_iter().enumerate() {
            if let Some(text) = a {
                out.push(ComprehensionAnswer { run, agent: format!("expert-{i}"), text });
            }
        }
        let remote = agents.consumers.iter().any(|a| a.is_remote());
        let views: Vec<ConsumerView> = (0..agents.consumers.len()).map(|c| self.consumer_view(c, 0, &[])).collect();
        let answers = stage(&mut agents.consumers, remote, |i, a| a.comprehension(&views[i]));
        for (i, a) in first_error(answers, run, 0, "consumer")?.into_iter().enumerate() {
            if let Some(text) = a {
                out.push(ComprehensionAnswer { run, agent: format!("consumer-{i}"), text });
            }
        }
        Ok(out)
    }

    fn play_round(&mut self, round: u32, agents: &mut AgentSet) -> Result<RoundRecord, SimError> {
        let (config, run) = (self.config, self.run);
        let n_e = config.n_experts;
        let problems =
            draw_problems(&mut self.tree.stream(run, round, Purpose::Problems, 0), config.n_consumers, config.h_big);
        let labels =
            make_label_permutation(&mut self.tree.stream(run, round, Purpose::Labels, 0), config.reputation, n_e);

        let experts_remote = agents.experts.iter().any(|a| a.is_remote());
        let views: Vec<ExpertView> = (0..n_e).map(|e| self.expert_view(e, round)).collect();

        // Stage barrier: every price is in before any plan is requested.
        let books = stage(&mut agents.experts, experts_remote, |i, a| a.post_prices(&views[i]));
        let books: Vec<PriceBook> = first_error(books, run, round, "expert")?;
        for b in &books {
            b.validate(config.grid()).map_err(|source| SimError::Market { run, round, source })?;
        }

        let plans = stage(&mut agents.experts, experts_remote, |i, a| a.plan(&views[i], books[i], &problems));
        let plans: Vec<ExpertPlan> = first_error(plans, run, round, "expert")?;

        let offers: Vec<DisplayedOffer> = labels
            .display_order
            .iter()
            .map(|&e| DisplayedOffer { label: labels.labels[e].clone(), book: books[e] })
            .collect();
        let consumers_remote = agents.consumers.iter().any(|a| a.is_remote());
        let cviews: Vec<ConsumerView> =
            (0..config.n_consumers).map(|c| self.consumer_view(c, round, &offers)).collect();
        let tree = &self.tree;
        let picks = stage(&mut agents.consumers, consumers_remote, |i, a| {
            let mut rng = tree.stream(run, round, Purpose::ConsumerTieBreak, i as u64);
            a.choose(&cviews[i], &mut rng)
        });
        let picks = first_error(picks, run, round, "consumer")?;
        let choices: Vec<ConsumerChoice> = picks
            .iter()
            .map(|p| match *p {
                // An out-of-range slot becomes an unknown expert id, which settlement rejects.
                OfferChoice::Slot(s) => ConsumerChoice::Approach(labels.expert_at_slot(s).unwrap_or(n_e + s)),
                OfferChoice::Exit => ConsumerChoice::Exit,
            })
            .collect();

        let condition = Condition {
            institution: config.institution,
            reputation: config.reputation,
            rounds: config.rounds,
            expert_objectives: config.experts.iter().map(|s| s.objective).collect(),
        };
        let record = resolve_round(
            RoundInputs {
                run,
                round,
                condition,
                problems,
                price_books: books,
                plans,
                choices,
                label_permutation: labels,
            },
            config,
        )
        .map_err(|source| SimError::Market { run, round, source })?;

        for e in 0..n_e {
            self.expert_history[e].push(ExpertHistoryEntry {
                round,
                prices: record.price_books[e],
                consumers_attracted: record.consumers_of(e),
                payoff: record.expert_payoffs[e],
            });
        }
        for (c, choice) in record.choices.iter().enumerate() {
            self.consumer_history[c].push(ConsumerHistoryEntry {
                round,
                offers: offers.clone(),
                approached: choice.expert().map(|e| record.label_permutation.labels[e].clone()),
                payoff: record.consumer_payoffs[c],
            });
        }
        Ok(record)
    }
}

/// Plays one full run. On failure the rounds completed so far are returned
/// with the error.
pub fn run_market(config: &MarketConfig, run: u32, agents: &mut AgentSet) -> Result<RunLog, Box<RunFailure>> {
    let mut log = RunLog { run, ..Default::default() };
    let fail = |log: RunLog, error| Box::new(RunFailure { partial: log, error });
    if agents.experts.len() != config.n_experts {
        let e = SimError::AgentCount { role: "expert", expected: config.n_experts, found: agents.experts.len() };
        return Err(fail(log, e));
    }
    if agents.consumers.len() != config.n_consumers {
        let e = SimError::AgentCount { role: "consumer", expected: config.n_consumers, found: agents.consumers.len() };
        return Err(fail(log, e));
    }
    let mut market = Market {
        config,
        run,
        tree: RngTree::new(config.seed),
        expert_history: vec![Vec::new(); config.n_experts],
        consumer_history: vec![Vec::new(); config.n_consumers],
    };
    match market.comprehension(agents) {
        Ok(c) => log.comprehension = c,
        Err(e) => return Err(fail(log, e)),
    }
    for round in 1..=config.rounds {
        match market.play_round(round, agents) {
            Ok(r) => log.records.push(r),
            Err(e) => return Err(fail(log, e)),
        }
    }
    Ok(log)
}

pub fn write_records<W: Write>(mut out: W, records: &[RoundRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {message}")]
    Format { line: usize, message: String },
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<RoundRecord>, LogError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LogError::Format { line: n + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{build_agents, AgentKind, AgentSpec, Objective};
    use crate::market::Institution;

    fn run(config: &MarketConfig) -> RunLog {
        let mut agents = build_agents(config, 0, None).unwrap();
        run_market(config, 0, &mut agents).unwrap()
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let config = MarketConfig { rounds: 16, seed: 11, ..Default::default() }.with_uniform_agents(
            AgentSpec::new(AgentKind::Random, Objective::Default),
            AgentSpec::new(AgentKind::Random, Objective::Default),
        );
        assert_eq!(run(&config), run(&config));
    }

    #[test]
    fn equilibrium_self_play_trades_at_predicted_book() {
        let config = MarketConfig { institution: Institution::Verifiability, rounds: 4, ..Default::default() };
        let log = run(&config);
        for r in &log.records {
            assert!(r.price_books.iter().all(|b| *b == PriceBook { low: 3, high: 7 }));
            assert!(r.choices.iter().all(|c| c.expert().is_some()));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let config = MarketConfig { rounds: 3, ..Default::default() };
        let log = run(&config);
        let mut buf = Vec::new();
        write_records(&mut buf, &log.records).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), log.records);
    }

    #[test]
    fn problem_draws_do_not_depend_on_agents() {
        let base = MarketConfig { rounds: 5, seed: 3, ..Default::default() };
        let other = base.clone().with_uniform_agents(
            AgentSpec::new(AgentKind::Random, Objective::Default),
            AgentSpec::new(AgentKind::Random, Objective::Default),
        );
        let a: Vec<_> = run(&base).records.into_iter().map(|r| r.problems).collect();
        let b: Vec<_> = run(&other).records.into_iter().map(|r| r.problems).collect();
        assert_eq!(a, b);
    }
}
