//! Unified cost: token cost plus per-call tool cost, all exact.
//!
//! `C = (input - cache)·r_in + cache·r_cache + output·r_out + Σ c_t·P_t`

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{ToolSet, UsageCounter};
use crate::money::{Money, MoneyParseError};

/// Input/output/cache-hit token counts. Cache hits are a subset of input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
    pub cache_hit: u64,
}

impl TokenUsage {
    pub fn new(input: u64, output: u64, cache_hit: u64) -> Self {
        debug_assert!(cache_hit <= input);
        TokenUsage { input, output, cache_hit }
    }

    pub fn is_zero(&self) -> bool {
        self.input == 0 && self.output == 0 && self.cache_hit == 0
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, o: TokenUsage) -> TokenUsage {
        TokenUsage {
            input: self.input + o.input,
            output: self.output + o.output,
            cache_hit: self.cache_hit + o.cache_hit,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, o: TokenUsage) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRates {
    pub input: Money,
    pub output: Money,
    pub cache_hit: Money,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PricingError {
    #[error("negative rate for {0}")]
    NegativeRate(String),
    #[error("cache-hit rate exceeds input rate")]
    CacheAboveInput,
    #[error(transparent)]
    Parse(#[from] MoneyParseError),
}

/// Per-token and per-call prices, in minor currency units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricingTable {
    pub currency: String,
    pub token_rates: TokenRates,
    pub tool_prices: BTreeMap<String, Money>,
}

impl PricingTable {
    pub fn new(
        currency: impl Into<String>,
        token_rates: TokenRates,
        tool_prices: BTreeMap<String, Money>,
    ) -> Result<Self, PricingError> {
        for (name, rate) in [
            ("input", token_rates.input),
            ("output", token_rates.output),
            ("cache_hit", token_rates.cache_hit),
        ] {
            if rate.is_negative() {
                return Err(PricingError::NegativeRate(name.into()));
            }
        }
        if let Some((name, _)) = tool_prices.iter().find(|(_, p)| p.is_negative()) {
            return Err(PricingError::NegativeRate(name.clone()));
        }
        if token_rates.cache_hit > token_rates.input {
            return Err(PricingError::CacheAboveInput);
        }
        Ok(PricingTable { currency: currency.into(), token_rates, tool_prices })
    }

    /// Builds a table from major-unit decimal rates quoted per million
    /// tokens, with tool prices taken from the tool set.
    pub fn per_million_tokens(
        currency: &str,
        input: &str,
        output: &str,
        cache_hit: &str,
        tools: &ToolSet,
    ) -> Result<Self, PricingError> {
        let per_token = |s: &str| -> Result<Money, PricingError> {
            Ok(Money::from_major_decimal(s)? / 1_000_000)
        };
        let rates = TokenRates {
            input: per_token(input)?,
            output: per_token(output)?,
            cache_hit: per_token(cache_hit)?,
        };
        let prices = tools.iter().map(|t| (t.name.clone(), t.price_per_call)).collect();
        Self::new(currency, rates, prices)
    }

    /// Zero token rates, default tool prices. Mock and test runs.
    pub fn tools_only(tools: &ToolSet) -> Self {
        let prices = tools.iter().map(|t| (t.name.clone(), t.price_per_call)).collect();
        let zero = Money::zero();
        PricingTable {
            currency: "USD".into(),
            token_rates: TokenRates { input: zero, output: zero, cache_hit: zero },
            tool_prices: prices,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub token_cost: Money,
    pub tool_cost: BTreeMap<String, Money>,
    pub total: Money,
}

impl CostBreakdown {
    pub fn tool_total(&self) -> Money {
        self.tool_cost.values().copied().sum()
    }
}

impl Add for CostBreakdown {
    type Output = CostBreakdown;
    fn add(self, o: CostBreakdown) -> CostBreakdown {
        let mut tool_cost = self.tool_cost;
        for (k, v) in o.tool_cost {
            *tool_cost.entry(k).or_insert_with(Money::zero) += v;
        }
        CostBreakdown { token_cost: self.token_cost + o.token_cost, tool_cost, total: self.total + o.total }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("tool {0:?} has no price")]
    UnpricedTool(String),
    #[error("no records to aggregate")]
    EmptyInput,
}

pub fn token_cost(usage: &TokenUsage, pricing: &PricingTable) -> Money {
    let r = &pricing.token_rates;
    let uncached = usage.input.saturating_sub(usage.cache_hit);
    r.input * uncached + r.cache_hit * usage.cache_hit + r.output * usage.output
}

pub fn unified_cost(
    usage: &TokenUsage,
    counts: &UsageCounter,
    pricing: &PricingTable,
) -> Result<CostBreakdown, CostError> {
    let token = token_cost(usage, pricing);
    let mut tool_cost = BTreeMap::new();
    for (tool, &n) in &counts.used {
        let price = pricing
            .tool_prices
            .get(tool)
            .ok_or_else(|| CostError::UnpricedTool(tool.clone()))?;
        tool_cost.insert(tool.clone(), *price * n);
    }
    let total = token + tool_cost.values().copied().sum::<Money>();
    Ok(CostBreakdown { token_cost: token, tool_cost, total })
}

/// What `aggregate_curve` needs from a finished run.
pub trait CurveSample {
    fn budget_level(&self) -> u64;
    fn is_correct(&self) -> bool;
    fn cost(&self) -> &CostBreakdown;
    fn tool_counts(&self) -> &UsageCounter;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurveRow {
    pub budget: u64,
    pub runs: u64,
    pub accuracy: Ratio<u64>,
    pub mean_cost: Money,
    pub mean_tool_counts: BTreeMap<String, Ratio<u64>>,
}

/// One row per distinct budget level, ascending, with exact means.
pub fn aggregate_curve<R: CurveSample>(records: &[R]) -> Result<Vec<CurveRow>, CostError> {
    if records.is_empty() {
        return Err(CostError::EmptyInput);
    }
    let mut groups: BTreeMap<u64, Vec<&R>> = BTreeMap::new();
    for r in records {
        groups.entry(r.budget_level()).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(budget, rs)| {
            let n = rs.len() as u64;
            let correct = rs.iter().filter(|r| r.is_correct()).count() as u64;
            let cost_sum: Money = rs.iter().map(|r| r.cost().total).sum();
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for r in &rs {
                for (t, c) in &r.tool_counts().used {
                    *counts.entry(t.clone()).or_insert(0) += c;
                }
            }
            CurveRow {
                budget,
                runs: n,
                accuracy: Ratio::new(correct, n),
                mean_cost: cost_sum / n,
                mean_tool_counts: counts.into_iter().map(|(t, c)| (t, Ratio::new(c, n))).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{BROWSE, SEARCH};

    fn rates(input: i128, cache: i128, output: i128) -> PricingTable {
        let per = |x: i128| Money::from_ratio(x, 1_000_000);
        PricingTable::new(
            "USD",
            TokenRates { input: per(input), output: per(output), cache_hit: per(cache) },
            ToolSet::search_agent().iter().map(|t| (t.name.clone(), t.price_per_call)).collect(),
        )
        .unwrap()
    }

    fn counts(search: u64, browse: u64) -> UsageCounter {
        let mut c = UsageCounter::default();
        c.add(SEARCH, search);
        c.add(BROWSE, browse);
        c
    }

    #[test]
    fn token_cost_examples() {
        let p = rates(2, 1, 6);
        assert_eq!(token_cost(&TokenUsage::default(), &p), Money::zero());
        // hand arithmetic: (1000*2 + 500*6) / 1e6 = 5000/1e6
        assert_eq!(token_cost(&TokenUsage::new(1000, 500, 0), &p), Money::from_ratio(5000, 1_000_000));
        assert_eq!(token_cost(&TokenUsage::new(1000, 0, 1000), &p), Money::from_ratio(1000, 1_000_000));
    }

    #[test]
    fn tool_cost_at_default_price() {
        let p = PricingTable::tools_only(&ToolSet::search_agent());
        let c = unified_cost(&TokenUsage::default(), &counts(10, 2), &p).unwrap();
        // 12 calls at 0.1 cent = 1.2 cents = $0.012
        assert_eq!(c.tool_total(), Money::from_ratio(12, 10));
        assert_eq!(c.tool_total(), Money::from_major_decimal("0.012").unwrap());
        assert_eq!(c.total, c.tool_total());
    }

    #[test]
    fn zero_inputs_cost_nothing() {
        let c = unified_cost(&TokenUsage::default(), &counts(0, 0), &rates(2, 1, 6)).unwrap();
        assert!(c.total.is_zero());
    }

    #[test]
    fn unpriced_tool_is_an_error() {
        let mut c = counts(1, 0);
        c.add("calc", 1);
        assert_eq!(
            unified_cost(&TokenUsage::default(), &c, &rates(1, 1, 1)).unwrap_err(),
            CostError::UnpricedTool("calc".into())
        );
    }

    #[test]
    fn pricing_validation() {
        let per = |x: i128| Money::from_ratio(x, 1_000_000);
        let bad = PricingTable::new(
            "USD",
            TokenRates { input: per(1), output: per(1), cache_hit: per(2) },
            BTreeMap::new(),
        );
        assert_eq!(bad.unwrap_err(), PricingError::CacheAboveInput);
        let neg = PricingTable::new(
            "USD",
            TokenRates { input: per(-1), output: per(1), cache_hit: per(0) },
            BTreeMap::new(),
        );
        assert!(matches!(neg, Err(PricingError::NegativeRate(_))));
        let p = PricingTable::per_million_tokens("USD", "1.25", "10", "0.31", &ToolSet::search_agent()).unwrap();
        assert_eq!(p.token_rates.input, Money::from_ratio(125, 1_000_000));
    }

    struct Rec {
        budget: u64,
        correct: bool,
        cost: CostBreakdown,
        counts: UsageCounter,
    }

    impl CurveSample for Rec {
        fn budget_level(&self) -> u64 {
            self.budget
        }
        fn is_correct(&self) -> bool {
            self.correct
        }
        fn cost(&self) -> &CostBreakdown {
            &self.cost
        }
        fn tool_counts(&self) -> &UsageCounter {
            &self.counts
        }
    }

    fn rec(budget: u64, correct: bool, cents: i128, search: u64) -> Rec {
        Rec {
            budget,
            correct,
            cost: CostBreakdown { total: Money::from_minor(cents), ..Default::default() },
            counts: counts(search, 0),
        }
    }

    #[test]
    fn curve_examples() {
        let rows = aggregate_curve(&[rec(10, true, 4, 3), rec(10, false, 6, 4)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].budget, 10);
        assert_eq!(rows[0].accuracy, Ratio::new(1, 2));
        assert_eq!(rows[0].mean_cost, Money::from_minor(5));
        assert_eq!(rows[0].mean_tool_counts[SEARCH], Ratio::new(7, 2));

        let single = aggregate_curve(&[rec(7, true, 3, 1)]).unwrap();
        assert_eq!(single[0].accuracy, Ratio::from_integer(1));
        assert_eq!(single[0].mean_cost, Money::from_minor(3));

        let two = aggregate_curve(&[rec(100, true, 1, 1), rec(10, true, 1, 1)]).unwrap();
        assert_eq!(two.iter().map(|r| r.budget).collect::<Vec<_>>(), vec![10, 100]);

        assert_eq!(aggregate_curve::<Rec>(&[]).unwrap_err(), CostError::EmptyInput);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn usage() -> impl Strategy<Value = TokenUsage> {
            (0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000)
                .prop_map(|(i, o, c)| TokenUsage::new(i, o, c.min(i)))
        }

        proptest! {
            #[test]
            fn linear_over_concatenation(a in usage(), b in usage(), s1 in 0u64..200, s2 in 0u64..200, b1 in 0u64..200, b2 in 0u64..200) {
                let p = rates(3, 1, 15);
                let ca = unified_cost(&a, &counts(s1, b1), &p).unwrap();
                let cb = unified_cost(&b, &counts(s2, b2), &p).unwrap();
                let both = unified_cost(&(a + b), &counts(s1 + s2, b1 + b2), &p).unwrap();
                prop_assert_eq!(both.total, ca.total + cb.total);
                prop_assert_eq!(both, ca + cb);
            }

            #[test]
            fn monotone_in_usage(a in usage(), extra in usage(), s in 0u64..100, ds in 0u64..5) {
                let p = rates(3, 1, 15);
                let base = unified_cost(&a, &counts(s, 0), &p).unwrap().total;
                let more = unified_cost(&(a + extra), &counts(s + ds, 0), &p).unwrap().total;
                prop_assert!(more >= base);
            }

            #[test]
            fn total_is_sum_of_parts(a in usage(), s in 0u64..100, b in 0u64..100) {
                let c = unified_cost(&a, &counts(s, b), &rates(2, 1, 6)).unwrap();
                prop_assert_eq!(c.total, c.token_cost + c.tool_total());
            }
        }
    }
}
