//! Command dispatch and result emission for the `recolat` binary.

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::asymptotics::{mu_infinity, qld, stationary_q};
use crate::config::{Model, RunConfig, Scenario};
use crate::continuous::{ct_solve_dual, integrate};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forward::{iterate, RecombinationModel};
use crate::linear::build_t_with;
use crate::lpp::{duality_estimate, simulate, summarise};
use crate::measure::{Distribution, Metapopulation};
use crate::partition::LabelledPartition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Forward iteration of the discrete dynamics.
    Iterate,
    /// Discrete dynamics via powers of the linearised system.
    Linear,
    /// Monte Carlo estimate via the labelled partitioning process.
    Simulate,
    /// Stationary migration profile and limiting population.
    Limit,
    /// Quasi-limiting distribution of the partitioning process.
    Qld,
    /// Continuous time via the generator's matrix exponential.
    CtSolve,
    /// Continuous time via fixed-step RK4.
    CtIntegrate,
    /// Dump the transition matrices T and Tul.
    #[value(name = "export-T")]
    ExportT,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "recolat", version, about = "Migration-recombination dynamics solvers")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: std::path::PathBuf,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub t: Option<f64>,
}

/// Values taken from the command line in preference to the config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub t: Option<f64>,
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_REPLICATES: usize = 10_000;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub quantity: String,
    pub t: Option<f64>,
    pub location: Option<String>,
    pub index: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

/// Rows in deterministic order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ResultTable {
    pub rows: Vec<Row>,
}

/// `v` rounded to 12 significant digits, printed in shortest form.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("float");
    if (1e-5..1e15).contains(&rounded.abs()) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

impl ResultTable {
    fn push(&mut self, quantity: &str, t: Option<f64>, location: Option<&str>, index: String, value: f64, stderr: Option<f64>) {
        self.rows.push(Row {
            quantity: quantity.to_string(),
            t,
            location: location.map(str::to_string),
            index,
            value,
            stderr,
        });
    }

    fn push_distribution(&mut self, quantity: &str, t: Option<f64>, location: &str, d: &Distribution, stderr: Option<&[f64]>) {
        for (i, w) in d.weights().iter().enumerate() {
            let se = stderr.map(|s| s[i]);
            self.push(quantity, t, Some(location), type_label(d, i), *w, se);
        }
    }

    fn push_population(&mut self, quantity: &str, t: Option<f64>, names: &[String], mu: &Metapopulation) {
        for (name, d) in names.iter().zip(mu.locations()) {
            self.push_distribution(quantity, t, name, d, None);
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv output: {e}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "t", "location", "index", "value", "stderr"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.quantity.clone(),
                r.t.map(|t| format!("{t}")).unwrap_or_default(),
                r.location.clone().unwrap_or_default(),
                r.index.clone(),
                format_sig12(r.value),
                r.stderr.map(format_sig12).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

fn type_label(d: &Distribution, index: usize) -> String {
    d.letters_of(index).iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
}

/// A command's result: a table, plus an optional dedicated JSON document.
#[derive(Clone, Debug)]
pub struct Output {
    pub table: ResultTable,
    pub json: Option<Value>,
    /// Replaces the table in CSV mode when set.
    pub csv: Option<String>,
}

impl Output {
    fn table(table: ResultTable) -> Self {
        Output {
            table,
            json: None,
            csv: None,
        }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => match &self.csv {
                Some(s) => Ok(s.clone()),
                None => self.table.to_csv(),
            },
            Format::Json => {
                let v = match &self.json {
                    Some(v) => v.clone(),
                    None => serde_json::to_value(&self.table.rows).expect("rows serialise"),
                };
                Ok(serde_json::to_string_pretty(&v).expect("json") + "\n")
            }
        }
    }
}

fn discrete(sc: &Scenario) -> Result<&RecombinationModel> {
    match &sc.model {
        Model::Discrete(m) => Ok(m),
        Model::Continuous(_) => Err(Error::InvalidArgument("command needs a discrete-mode config".into())),
    }
}

fn horizon(cfg: &RunConfig, ov: &Overrides) -> Result<f64> {
    ov.t.or(cfg.t)
        .ok_or_else(|| Error::InvalidArgument("no horizon: set t in the config or pass --t".into()))
}

fn generations(cfg: &RunConfig, ov: &Overrides) -> Result<u64> {
    let t = horizon(cfg, ov)?;
    if t < 0.0 || t.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("discrete horizon {t} must be a non-negative integer")));
    }
    Ok(t as u64)
}

/// Runs `command` on a parsed config.
pub fn run(command: Command, cfg: &RunConfig, ov: &Overrides) -> Result<Output> {
    let sc = cfg.build()?;
    let exec = Execution::default();
    match command {
        Command::Iterate => {
            let model = discrete(&sc)?;
            let t = generations(cfg, ov)?;
            let mut table = ResultTable::default();
            for (s, mu) in iterate(&sc.initial, model, t)?.iter().enumerate() {
                table.push_population("mu", Some(s as f64), model.locations(), mu);
            }
            Ok(Output::table(table))
        }
        Command::Linear => {
            let model = discrete(&sc)?;
            let t = generations(cfg, ov)?;
            let sys = build_t_with(model, exec);
            let mut table = ResultTable::default();
            for s in 0..=t {
                let mu = sys.solve(&sc.initial, s, exec)?;
                table.push_population("mu", Some(s as f64), model.locations(), &mu);
            }
            Ok(Output::table(table))
        }
        Command::Simulate => {
            let model = discrete(&sc)?;
            let t = generations(cfg, ov)?;
            let seed = ov.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
            let reps = ov.replicates.or(cfg.replicates).unwrap_or(DEFAULT_REPLICATES);
            let mut table = ResultTable::default();
            for (a, name) in model.locations().iter().enumerate() {
                let est = duality_estimate(a, t, &sc.initial, model, reps, seed, exec)?;
                table.push_distribution("mu_mc", Some(t as f64), name, &est.mean, Some(&est.stderr));
            }
            let mut states = Vec::new();
            for (a, name) in model.locations().iter().enumerate() {
                let start = LabelledPartition::coarsest(model.full_set(), a)?;
                let ens = simulate(&start, model, t, reps, seed, exec)?;
                for f in summarise(&ens, t)? {
                    table.push(
                        "lpp_state",
                        Some(t as f64),
                        Some(name),
                        f.state.display_with(model.locations()),
                        f.probability,
                        Some(f.stderr),
                    );
                    states.push(json!({"start": name, "t": f.t, "state": f.state, "probability": f.probability, "stderr": f.stderr}));
                }
            }
            let mut out = Output::table(table.clone());
            let estimates: Vec<&Row> = table.rows.iter().filter(|r| r.quantity == "mu_mc").collect();
            out.json = Some(json!({"estimates": estimates, "ensemble": states}));
            Ok(out)
        }
        Command::Limit => {
            let model = discrete(&sc)?;
            let q = stationary_q(model.migration())?;
            let lim = mu_infinity(&sc.initial, model)?;
            let mut table = ResultTable::default();
            for (name, x) in model.locations().iter().zip(&q.q) {
                table.push("q", None, Some(name), String::new(), *x, None);
            }
            table.push_population("mu_inf", None, model.locations(), &lim);
            Ok(Output::table(table))
        }
        Command::Qld => {
            let model = discrete(&sc)?;
            let report = qld(model)?;
            let mut table = ResultTable::default();
            table.push("eta", None, None, String::new(), report.eta, None);
            for p in &report.p_qlim {
                table.push("P_qlim", None, None, p.partition.to_string(), p.probability, None);
            }
            for p in &report.labelled_qlim {
                table.push("labelled_qlim", None, None, p.state.display_with(model.locations()), p.probability, None);
            }
            for (name, x) in model.locations().iter().zip(&report.q) {
                table.push("q", None, Some(name), String::new(), *x, None);
            }
            let mut out = Output::table(table);
            out.json = Some(serde_json::to_value(&report).expect("report serialises"));
            Ok(out)
        }
        Command::CtSolve | Command::CtIntegrate => {
            let Model::Continuous(ct) = &sc.model else {
                return Err(Error::InvalidArgument("command needs a continuous-mode config".into()));
            };
            let t = horizon(cfg, ov)?;
            let mut table = ResultTable::default();
            if command == Command::CtSolve {
                let omega = ct_solve_dual(&sc.initial, ct, t)?;
                table.push_population("omega", Some(t), ct.locations(), &omega);
            } else {
                let traj = integrate(&sc.initial, ct, t, cfg.dt.unwrap_or(DEFAULT_DT))?;
                table.push_population("omega", Some(t), ct.locations(), traj.last());
                table.push("mass_drift", Some(t), None, String::new(), traj.max_mass_drift, None);
            }
            Ok(Output::table(table))
        }
        Command::ExportT => {
            let model = discrete(&sc)?;
            let sys = build_t_with(model, exec);
            let mut t_csv = Vec::new();
            sys.write_t_csv(&mut t_csv)?;
            let mut tul_csv = Vec::new();
            sys.write_tul_csv(&mut tul_csv)?;
            let mut csv = String::from("matrix,");
            let t_text = String::from_utf8(t_csv).expect("utf-8");
            let tul_text = String::from_utf8(tul_csv).expect("utf-8");
            let mut lines = t_text.lines();
            csv.push_str(lines.next().unwrap_or_default());
            csv.push('\n');
            for l in lines {
                csv.push_str("T,");
                csv.push_str(l);
                csv.push('\n');
            }
            for l in tul_text.lines().skip(1) {
                csv.push_str("Tul,");
                csv.push_str(l);
                csv.push('\n');
            }
            let json = json!({
                "states": sys.states().iter().map(|s| s.display_with(model.locations())).collect::<Vec<_>>(),
                "T": sys.t().to_rows(),
                "partitions": sys.partitions().iter().map(|p| p.to_string()).collect::<Vec<_>>(),
                "Tul": sys.tul().to_rows(),
            });
            Ok(Output {
                table: ResultTable::default(),
                json: Some(json),
                csv: Some(csv),
            })
        }
    }
}
