use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use atlas_core::env::{load_tasks, SiteSpec, TaskSpec};
use atlas_core::explore::{
    coverage, default_portfolio, mine_trajectories, run_exploration, ExplorationBudget,
    ExplorationPolicyConfig, Strategy,
};
use atlas_core::fixtures::{all_sites, site_by_name, suite_tasks};
use atlas_core::harness::{
    ablation_table, build_memories, eval_dir, run_ablation, run_suite, site_index, suite_budget,
    RunConfig, SuiteMetrics,
};
use atlas_core::memory::{
    facts_path_for, load_facts, load_map, save_facts, save_map, MapMode, ObservationKey, SiteMemory,
};

#[derive(Parser)]
#[command(
    name = "atlas",
    version,
    about = "Explore simulated sites, run agent suites and compare ablations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explore a site without a task and save the resulting map and facts.
    Explore(ExploreArgs),
    /// Run a task suite under one config and write logs and metrics.
    Run(RunArgs),
    /// Recompute suite metrics from the episode logs in an output directory.
    Eval { out_dir: PathBuf },
    /// Print the transitions stored in a map file.
    InspectMap {
        #[arg(long)]
        map: PathBuf,
        /// Only show this node (full key, key prefix or page id).
        #[arg(long)]
        from: Option<String>,
    },
    /// Run a grid of configs over the same suite and print a comparison table.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    BreadthFirstAffordance,
    DepthFirstRandom,
    EntropyGreedy,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::BreadthFirstAffordance => Strategy::BreadthFirstAffordance,
            StrategyArg::DepthFirstRandom => Strategy::DepthFirstRandom,
            StrategyArg::EntropyGreedy => Strategy::EntropyGreedy,
        }
    }
}

#[derive(clap::Args)]
struct ExploreArgs {
    /// Site file, or a bundled site id (shop-admin, code-host, forum).
    #[arg(long)]
    site: String,
    /// Total environment steps across all policies.
    #[arg(long)]
    budget: usize,
    /// Map file to write; facts go next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explore with a single strategy instead of the default portfolio.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Config whose backend selection is used (file or preset name).
    #[arg(long)]
    config: Option<String>,
    /// Also write the exploration report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// Site file or bundled site id; repeat for multi-site suites.
    #[arg(long, required = true)]
    site: Vec<String>,
    /// Config file or preset name.
    #[arg(long)]
    config: String,
    /// Map file per site; repeatable.
    #[arg(long)]
    map: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct AblateArgs {
    /// Config files or preset names, comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    grid: Vec<String>,
    /// Task file; defaults to the bundled suite.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Sites; default to the bundled ones.
    #[arg(long)]
    site: Vec<String>,
    /// Map files; sites without one are explored first.
    #[arg(long)]
    map: Vec<PathBuf>,
    /// Write each row's logs and metrics under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_site(arg: &str) -> Result<Arc<SiteSpec>> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(Arc::new(SiteSpec::load(path)?));
    }
    site_by_name(arg).ok_or_else(|| anyhow!("{arg}: no such site file or bundled site"))
}

fn load_config(arg: &str) -> Result<RunConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(RunConfig::load(path)?);
    }
    RunConfig::preset(arg).ok_or_else(|| anyhow!("{arg}: no such config file or preset"))
}

fn load_memory(path: &Path) -> Result<SiteMemory> {
    let map = load_map(path)?;
    let facts_path = facts_path_for(path);
    let facts = if facts_path.exists() {
        let (site, facts) = load_facts(&facts_path)?;
        if site != map.site_id {
            bail!(
                "{}: facts are for site '{site}' but the map is for '{}'",
                facts_path.display(),
                map.site_id
            );
        }
        facts
    } else {
        Default::default()
    };
    Ok(SiteMemory { map, facts })
}

fn load_memories(
    paths: &[PathBuf],
    config: Option<&RunConfig>,
) -> Result<BTreeMap<String, SiteMemory>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if !p.exists() {
            if let Some(cfg) = config {
                cfg.require_map("", Some(p))?;
            }
        }
        let memory = load_memory(p)?;
        out.insert(memory.site_id().to_string(), memory);
    }
    Ok(out)
}

fn print_metrics(m: &SuiteMetrics) {
    println!("config: {}", m.config);
    for (cat, r) in &m.per_category {
        println!(
            "  {cat:<12} {}/{}  {:.1}%",
            r.successes,
            r.total,
            r.rate * 100.0
        );
    }
    println!(
        "  {:<12} {}/{}  {:.1}%",
        "overall",
        m.successes,
        m.total,
        m.overall_rate * 100.0
    );
}

fn explore(args: ExploreArgs) -> Result<()> {
    if args.budget == 0 {
        bail!("--budget must be positive");
    }
    let spec = load_site(&args.site)?;
    let config = args
        .config
        .as_deref()
        .map(load_config)
        .transpose()?
        .unwrap_or_default();
    let backend = config.backends.build()?;
    let policies = match args.strategy {
        Some(s) => vec![ExplorationPolicyConfig::new("single", s.into(), 1.0, 60)],
        None => default_portfolio(),
    };
    let per_policy = args.budget.div_ceil(policies.len());
    let budget = ExplorationBudget::new(args.budget, per_policy, 10_000);
    let mut memory = SiteMemory::new(&spec.site_id, MapMode::Summarized);
    let report = run_exploration(
        &spec,
        &policies,
        budget,
        Some(backend.as_ref()),
        &mut memory,
        args.seed,
    )?;
    let facts = mine_trajectories(&report, backend.as_ref(), &mut memory)?;
    save_map(&memory.map, &args.out)?;
    let facts_path = facts_path_for(&args.out);
    save_facts(&spec.site_id, &memory.facts, &facts_path)?;
    if let Some(path) = &args.report {
        let doc = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, doc + "\n")
            .with_context(|| format!("{}: cannot write report", path.display()))?;
    }
    println!(
        "explored {}: {} steps, coverage {:.2}, {} map records, {} facts",
        spec.site_id,
        report.steps_used,
        coverage(&report, &spec),
        memory.map.len(),
        facts.len()
    );
    println!(
        "map: {}\nfacts: {}",
        args.out.display(),
        facts_path.display()
    );
    Ok(())
}

fn tasks_and_sites(tasks: &[TaskSpec], sites: &BTreeMap<String, Arc<SiteSpec>>) -> Result<()> {
    for t in tasks {
        if !sites.contains_key(&t.site_id) {
            bail!(
                "task {} needs site '{}', which was not given",
                t.task_id,
                t.site_id
            );
        }
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let tasks = load_tasks(&args.tasks)?;
    let sites = site_index(
        args.site
            .iter()
            .map(|s| load_site(s))
            .collect::<Result<Vec<_>>>()?,
    );
    tasks_and_sites(&tasks, &sites)?;
    let map_paths: BTreeMap<String, PathBuf> = {
        let mut m = BTreeMap::new();
        for p in &args.map {
            if !p.exists() {
                config.require_map("", Some(p))?;
                bail!("{}: map file not found", p.display());
            }
            m.insert(load_map(p)?.site_id, p.clone());
        }
        m
    };
    for t in &tasks {
        config.require_map(&t.site_id, map_paths.get(&t.site_id).map(PathBuf::as_path))?;
    }
    let mut memories = load_memories(&args.map, Some(&config))?;
    let backend = config.backends.build()?;
    let report = run_suite(&tasks, &sites, &mut memories, &config, backend.as_ref())?;
    report.write(&args.out)?;
    print_metrics(&report.metrics);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn inspect_map(path: &Path, from: Option<&str>) -> Result<()> {
    let map = load_map(path)?;
    let mut page_of: BTreeMap<&ObservationKey, &str> = BTreeMap::new();
    for r in map.records() {
        page_of.insert(&r.to_key, &r.raw_to_observation.page_id);
    }
    let nodes = map.node_keys();
    let selected: Vec<&ObservationKey> = nodes
        .iter()
        .filter(|k| match from {
            None => true,
            Some(f) => {
                k.as_str() == f
                    || k.as_str().starts_with(f)
                    || page_of.get(k).is_some_and(|p| *p == f)
            }
        })
        .collect();
    if selected.is_empty() {
        bail!(
            "{}: no node matches '{}'",
            path.display(),
            from.unwrap_or_default()
        );
    }
    println!(
        "map {} ({:?}): {} nodes, {} edges",
        map.site_id,
        map.mode,
        nodes.len(),
        map.len()
    );
    for key in selected {
        println!(
            "node {} [{}]",
            key.as_str(),
            page_of.get(key).copied().unwrap_or("?")
        );
        let edges = map.edges_from(key);
        if edges.is_empty() {
            println!("  (no outgoing edges)");
        }
        for r in edges {
            let mut line = format!(
                "  {} -> {} [{}] count={} U={:.3}",
                r.action_signature,
                r.to_key.as_str(),
                r.raw_to_observation.page_id,
                r.count,
                map.slot_uncertainty(r)
            );
            if let Some(s) = &r.summary {
                line.push_str(&format!(" :: {}", s.delta));
                if !s.new_affordances.is_empty() {
                    line.push_str(&format!(" (new: {})", s.new_affordances.join(", ")));
                }
                if s.hazard_flag {
                    line.push_str(" HAZARD");
                }
            }
            println!("{line}");
        }
    }
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let configs = args
        .grid
        .iter()
        .map(|g| load_config(g))
        .collect::<Result<Vec<_>>>()?;
    let tasks = match &args.tasks {
        Some(p) => load_tasks(p)?,
        None => suite_tasks(),
    };
    let sites = if args.site.is_empty() {
        site_index(all_sites())
    } else {
        site_index(
            args.site
                .iter()
                .map(|s| load_site(s))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    tasks_and_sites(&tasks, &sites)?;
    let mut memories = load_memories(&args.map, None)?;
    let missing: BTreeMap<String, Arc<SiteSpec>> = sites
        .iter()
        .filter(|(id, _)| !memories.contains_key(*id))
        .map(|(k, v)| (k.clone(), Arc::clone(v)))
        .collect();
    if !missing.is_empty() {
        let explorer = configs[0].backends.build()?;
        memories.extend(build_memories(
            &missing,
            suite_budget(),
            args.seed,
            explorer.as_ref(),
        )?);
    }
    let rows = run_ablation(
        &configs,
        &tasks,
        &sites,
        &memories,
        &|cfg| cfg.backends.build(),
        args.out.as_deref(),
    )?;
    print!("{}", ablation_table(&rows));
    if let Some(out) = &args.out {
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("error")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explore(a) => explore(a),
        Command::Run(a) => run(a),
        Command::Eval { out_dir } => eval_dir(&out_dir)
            .map(|m| print_metrics(&m))
            .map_err(Into::into),
        Command::InspectMap { map, from } => inspect_map(&map, from.as_deref()),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
