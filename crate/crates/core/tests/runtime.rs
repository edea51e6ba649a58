use std::sync::Arc;

use proptest::prelude::*;

use bats_core::agent::{run_react, AgentConfig, Mode, StepKind};
use bats_core::bench::exact_match;
use bats_core::events::{ClockMode, Emitter, EventKind, EventLog};
use bats_core::ledger::{BudgetVector, Ledger, ToolSet, SEARCH};
use bats_core::providers::world::{SyntheticWorld, WorldPolicy, WorldProvider};
use bats_core::providers::Providers;
use bats_core::scaling::bats_run;

fn providers(world: &SyntheticWorld) -> Providers {
    let web = Arc::new(WorldProvider::single(world.clone()));
    Providers::new(Arc::new(WorldPolicy::aware()), web.clone(), web)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The budget-aware mock solves a world exactly when the search budget
    /// covers the shortest solution found by exhaustive search.
    #[test]
    fn aware_solves_iff_budget_covers_shortest_path(seed in 0u64..500, depth in 1u32..6, budget in 1u64..8) {
        let world = SyntheticWorld::build(seed, depth, 2);
        let shortest = world.shortest_solution(12).expect("solvable");
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(budget, budget)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::ReactTracker);
        let em = Emitter::new(EventLog::new(), "w", ClockMode::Logical);
        let t = run_react("w", &world.target.question, &ledger, &cfg, &providers(&world), &em, None);
        let ok = t.answer.as_deref().is_some_and(|a| exact_match(a, &world.target.gold));
        prop_assert_eq!(ok, budget >= u64::from(shortest));
        prop_assert!(ledger.usage().get(SEARCH) <= budget);
    }
}

#[test]
fn bats_on_world_succeeds_with_one_attempt() {
    let world = SyntheticWorld::build(3, 4, 2);
    let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(10, 10)).unwrap();
    let log = EventLog::new();
    let em = Emitter::new(log.clone(), "b", ClockMode::Logical);
    let cfg = AgentConfig::for_mode(Mode::Bats);
    let out = bats_run("b", &world.target.question, &ledger, &cfg, &providers(&world), &em, true, None);
    assert_eq!(out.answer, world.target.gold);
    assert_eq!(out.attempts.len(), 1);
    assert!(out.attempts[0].succeeded());
    assert!(!out.constraints.is_empty());
    let verdicts = log.events().iter().filter(|e| matches!(e.kind, EventKind::Verdict { .. })).count();
    assert_eq!(verdicts, 1);
}

#[test]
fn bats_pivots_until_budget_runs_out() {
    // depth 6 with 4 searches: every attempt falls short
    let world = SyntheticWorld::build(8, 6, 2);
    let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(4, 4)).unwrap();
    let em = Emitter::new(EventLog::new(), "p", ClockMode::Logical);
    let cfg = AgentConfig::for_mode(Mode::Bats);
    let out = bats_run("p", &world.target.question, &ledger, &cfg, &providers(&world), &em, true, None);
    assert!(ledger.any_exhausted());
    assert!(out.attempts.iter().all(|a| !a.succeeded()));
    assert_eq!(ledger.usage().get(SEARCH), 4);
    let last = out.trajectories.last().unwrap();
    assert!(last.count(StepKind::ForcingMessage) >= 1);
}
