use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModuleTag, UsageRecord};

/// Append-only log of model calls and their costs.
#[derive(Debug, Default, Clone)]
pub struct UsageLedger {
    records: Vec<UsageRecord>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, record: UsageRecord) {
        self.records.push(record);
    }

    pub fn absorb(&mut self, records: impl IntoIterator<Item = UsageRecord>) {
        self.records.extend(records);
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<UsageRecord> {
        self.records
    }

    /// Spend attributed to the agent itself (judge calls excluded).
    pub fn agent_cost_usd(&self) -> f64 {
        self.records
            .iter()
            .filter(|r| r.module.counts_toward_agent_cost())
            .map(|r| r.cost_usd)
            .sum()
    }

    pub fn report(&self) -> LedgerReport {
        let mut per_module: BTreeMap<ModuleTag, ModuleTotals> = BTreeMap::new();
        for r in &self.records {
            let entry = per_module.entry(r.module).or_default();
            entry.calls += 1;
            entry.input_tokens += r.input_tokens;
            entry.output_tokens += r.output_tokens;
            entry.cost_usd += r.cost_usd;
        }
        let agent_cost_usd = self.agent_cost_usd();
        let judge_cost_usd =
            per_module.get(&ModuleTag::Judge).map(|t| t.cost_usd).unwrap_or(0.0);
        LedgerReport {
            per_module,
            agent_cost_usd,
            judge_cost_usd,
            total_cost_usd: agent_cost_usd + judge_cost_usd,
        }
    }
}

/// Aggregated counters for one module.
#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
}

/// Cost summary of a run: per-module totals plus the agent/judge split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub per_module: BTreeMap<ModuleTag, ModuleTotals>,
    /// Policy + localizer + validator spend.
    pub agent_cost_usd: f64,
    /// Benchmark judging spend, kept out of the agent number.
    pub judge_cost_usd: f64,
    pub total_cost_usd: f64,
}

impl LedgerReport {
    /// Plain-text table for terminal output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>7} {:>12} {:>12} {:>12}\n",
            "module", "calls", "tokens in", "tokens out", "cost (USD)"
        ));
        for (module, t) in &self.per_module {
            out.push_str(&format!(
                "{:<12} {:>7} {:>12} {:>12} {:>12.6}\n",
                module.as_str(),
                t.calls,
                t.input_tokens,
                t.output_tokens,
                t.cost_usd
            ));
        }
        out.push_str(&format!("agent cost  {:.6} USD\n", self.agent_cost_usd));
        if self.judge_cost_usd > 0.0 {
            out.push_str(&format!("judge cost  {:.6} USD\n", self.judge_cost_usd));
        }
        out.push_str(&format!("total cost  {:.6} USD\n", self.total_cost_usd));
        out
    }
}
