use serde::{Deserialize, Serialize};

use crate::config::MarketConfig;
use crate::market::{Problem, RoundRecord};
use crate::money::Money;

use super::MetricsError;

/// Cell means over simulation x period. `None` marks an empty denominator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub periods: usize,
    pub trade_consumer_side: Option<f64>,
    pub trade_seller_side: Option<f64>,
    pub avg_consumers_per_active_seller: Option<f64>,
    pub efficiency: Option<f64>,
    pub under_treatment_intended: Option<f64>,
    pub under_treatment_realized: Option<f64>,
    pub over_treatment_intended: Option<f64>,
    pub over_treatment_realized: Option<f64>,
    pub overcharging_intended: Option<f64>,
    pub overcharging_realized: Option<f64>,
    pub p_low_with_trade: Option<f64>,
    pub p_low_without_trade: Option<f64>,
    pub p_high_with_trade: Option<f64>,
    pub p_high_without_trade: Option<f64>,
    pub paid_price: Option<f64>,
    pub profit_seller_period: Option<f64>,
    pub profit_consumer_period: Option<f64>,
    pub mean_total_income: Option<f64>,
}

impl MetricsSummary {
    /// Looks a metric up by its field name.
    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "trade_consumer_side" => self.trade_consumer_side,
            "trade_seller_side" => self.trade_seller_side,
            "avg_consumers_per_active_seller" => self.avg_consumers_per_active_seller,
            "efficiency" => self.efficiency,
            "under_treatment_intended" => self.under_treatment_intended,
            "under_treatment_realized" => self.under_treatment_realized,
            "over_treatment_intended" => self.over_treatment_intended,
            "over_treatment_realized" => self.over_treatment_realized,
            "overcharging_intended" => self.overcharging_intended,
            "overcharging_realized" => self.overcharging_realized,
            "p_low_with_trade" => self.p_low_with_trade,
            "p_low_without_trade" => self.p_low_without_trade,
            "p_high_with_trade" => self.p_high_with_trade,
            "p_high_without_trade" => self.p_high_without_trade,
            "paid_price" => self.paid_price,
            "profit_seller_period" => self.profit_seller_period,
            "profit_consumer_period" => self.profit_consumer_period,
            "mean_total_income" => self.mean_total_income,
            _ => None,
        }
    }
}

/// (mean_total − baseline) / (max − baseline).
pub fn efficiency(mean_total_income: f64, baseline: f64, max_income: f64) -> Result<f64, MetricsError> {
    if max_income.partial_cmp(&baseline) != Some(std::cmp::Ordering::Greater) {
        return Err(MetricsError::Config(format!("maximum income {max_income} must exceed the baseline {baseline}")));
    }
    Ok((mean_total_income - baseline) / (max_income - baseline))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Ratio {
    num: i64,
    den: i64,
}

impl Ratio {
    fn add(&mut self, num: i64, den: i64) {
        self.num += num;
        self.den += den;
    }

    fn hit(&mut self, flag: bool) {
        self.add(flag as i64, 1);
    }

    fn value(self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }

    /// Numerator is in thousandths.
    fn money_value(self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / (self.den as f64 * 1000.0))
    }
}

/// Streaming form of [`aggregate`]: feed records one at a time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    runs: std::collections::BTreeSet<u32>,
    periods: i64,
    traders: Ratio,
    active_sellers: Ratio,
    /// Sum of per-period trades/active sellers, kept as a fraction per period.
    per_active: Vec<(i64, i64)>,
    ut_int: Ratio,
    ot_int: Ratio,
    oc_int: Ratio,
    ut_real: Ratio,
    ot_real: Ratio,
    oc_real: Ratio,
    p_low_trade: Ratio,
    p_low_idle: Ratio,
    p_high_trade: Ratio,
    p_high_idle: Ratio,
    paid: Ratio,
    seller_profit: Ratio,
    consumer_profit: Ratio,
    total: Ratio,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: &RoundRecord) {
        self.runs.insert(r.run);
        self.periods += 1;
        let n_e = r.price_books.len();
        let trades = r.trades.len() as i64;
        self.traders.add(trades, r.choices.len() as i64);
        let active = (0..n_e).filter(|&e| r.consumers_of(e) > 0).count() as i64;
        self.active_sellers.add(active, n_e as i64);
        if active > 0 {
            self.per_active.push((trades, active));
        }
        for plan_row in &r.fraud_intended {
            for (flags, problem) in plan_row.iter().zip(&r.problems) {
                match problem {
                    Problem::Big => self.ut_int.hit(flags.under_treatment),
                    Problem::Small => self.ot_int.hit(flags.over_treatment),
                }
                self.oc_int.hit(flags.over_charging);
            }
        }
        for t in &r.trades {
            match r.problems[t.consumer] {
                Problem::Big => self.ut_real.hit(t.fraud.under_treatment),
                Problem::Small => self.ot_real.hit(t.fraud.over_treatment),
            }
            self.oc_real.hit(t.fraud.over_charging);
            self.paid.add(t.decision.charge as i64, 1);
        }
        for (e, book) in r.price_books.iter().enumerate() {
            if r.consumers_of(e) > 0 {
                self.p_low_trade.add(book.low as i64, 1);
                self.p_high_trade.add(book.high as i64, 1);
            } else {
                self.p_low_idle.add(book.low as i64, 1);
                self.p_high_idle.add(book.high as i64, 1);
            }
        }
        for p in &r.expert_payoffs {
            self.seller_profit.add(p.milli(), 1);
        }
        for p in &r.consumer_payoffs {
            self.consumer_profit.add(p.milli(), 1);
        }
        self.total.add(r.total_income().milli(), 1);
    }

    pub fn finish(&self, config: &MarketConfig) -> MetricsSummary {
        let mean_total = self.total.money_value();
        let per_active = if self.per_active.is_empty() {
            None
        } else {
            let sum: f64 = self.per_active.iter().map(|&(t, a)| t as f64 / a as f64).sum();
            Some(sum / self.per_active.len() as f64)
        };
        MetricsSummary {
            runs: self.runs.len(),
            periods: self.periods as usize,
            trade_consumer_side: self.traders.value(),
            trade_seller_side: self.active_sellers.value(),
            avg_consumers_per_active_seller: per_active,
            efficiency: mean_total
                .and_then(|m| efficiency(m, config.baseline_income().as_f64(), config.max_expected_income()).ok()),
            under_treatment_intended: self.ut_int.value(),
            under_treatment_realized: self.ut_real.value(),
            over_treatment_intended: self.ot_int.value(),
            over_treatment_realized: self.ot_real.value(),
            overcharging_intended: self.oc_int.value(),
            overcharging_realized: self.oc_real.value(),
            p_low_with_trade: self.p_low_trade.value(),
            p_low_without_trade: self.p_low_idle.value(),
            p_high_with_trade: self.p_high_trade.value(),
            p_high_without_trade: self.p_high_idle.value(),
            paid_price: self.paid.value(),
            profit_seller_period: self.seller_profit.money_value(),
            profit_consumer_period: self.consumer_profit.money_value(),
            mean_total_income: mean_total,
        }
    }
}

fn mean_of<I: Iterator<Item = (bool, bool)>>(cells: I) -> Option<f64> {
    // (in denominator, counted)
    let (mut num, mut den) = (0usize, 0usize);
    for (in_den, hit) in cells {
        if in_den {
            den += 1;
            num += hit as usize;
        }
    }
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_u32<I: Iterator<Item = u32>>(xs: I) -> Option<f64> {
    let (sum, n) = xs.fold((0u64, 0u64), |(s, n), x| (s + x as u64, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

fn mean_money<I: Iterator<Item = Money>>(xs: I) -> Option<f64> {
    let (sum, n) = xs.fold((0i64, 0i64), |(s, n), x| (s + x.milli(), n + 1));
    (n > 0).then(|| sum as f64 / (n as f64 * 1000.0))
}

/// Batch aggregation over a homogeneous condition cell.
pub fn aggregate(records: &[RoundRecord], config: &MarketConfig) -> MetricsSummary {
    let runs: std::collections::BTreeSet<u32> = records.iter().map(|r| r.run).collect();
    let plan_cells = || {
        records
            .iter()
            .flat_map(|r| r.fraud_intended.iter().flat_map(move |row| row.iter().zip(r.problems.iter().copied())))
    };
    let trades = || records.iter().flat_map(|r| r.trades.iter().map(move |t| (t, r.problems[t.consumer])));
    let expert_periods =
        || records.iter().flat_map(|r| r.price_books.iter().enumerate().map(move |(e, b)| (*b, r.consumers_of(e) > 0)));

    let per_active: Vec<f64> = records
        .iter()
        .filter_map(|r| {
            let active = (0..r.price_books.len()).filter(|&e| r.consumers_of(e) > 0).count();
            (active > 0).then(|| r.trades.len() as f64 / active as f64)
        })
        .collect();
    let mean_total = mean_money(records.iter().map(RoundRecord::total_income));

    MetricsSummary {
        runs: runs.len(),
        periods: records.len(),
        trade_consumer_side: mean_of(
            records.iter().flat_map(|r| r.choices.iter().map(|c| (true, c.expert().is_some()))),
        ),
        trade_seller_side: mean_of(expert_periods().map(|(_, traded)| (true, traded))),
        avg_consumers_per_active_seller: (!per_active.is_empty())
            .then(|| per_active.iter().sum::<f64>() / per_active.len() as f64),
        efficiency: mean_total
            .and_then(|m| efficiency(m, config.baseline_income().as_f64(), config.max_expected_income()).ok()),
        under_treatment_intended: mean_of(plan_cells().map(|(f, p)| (p == Problem::Big, f.under_treatment))),
        under_treatment_realized: mean_of(trades().map(|(t, p)| (p == Problem::Big, t.fraud.under_treatment))),
        over_treatment_intended: mean_of(plan_cells().map(|(f, p)| (p == Problem::Small, f.over_treatment))),
        over_treatment_realized: mean_of(trades().map(|(t, p)| (p == Problem::Small, t.fraud.over_treatment))),
        overcharging_intended: mean_of(plan_cells().map(|(f, _)| (true, f.over_charging))),
        overcharging_realized: mean_of(trades().map(|(t, _)| (true, t.fraud.over_charging))),
        p_low_with_trade: mean_u32(expert_periods().filter(|x| x.1).map(|x| x.0.low)),
        p_low_without_trade: mean_u32(expert_periods().filter(|x| !x.1).map(|x| x.0.low)),
        p_high_with_trade: mean_u32(expert_periods().filter(|x| x.1).map(|x| x.0.high)),
        p_high_without_trade: mean_u32(expert_periods().filter(|x| !x.1).map(|x| x.0.high)),
        paid_price: mean_u32(trades().map(|(t, _)| t.decision.charge)),
        profit_seller_period: mean_money(records.iter().flat_map(|r| r.expert_payoffs.iter().copied())),
        profit_consumer_period: mean_money(records.iter().flat_map(|r| r.consumer_payoffs.iter().copied())),
        mean_total_income: mean_total,
    }
}

/// Total income of each run over all its rounds, ordered by run id.
pub fn run_totals(records: &[RoundRecord]) -> Vec<(u32, f64)> {
    let mut totals: std::collections::BTreeMap<u32, i64> = Default::default();
    for r in records {
        *totals.entry(r.run).or_default() += r.total_income().milli();
    }
    totals.into_iter().map(|(run, m)| (run, m as f64 / 1000.0)).collect()
}
