use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rtdispatch::domain::{build_grid, Grid};
use rtdispatch::geo::{BoundingBox, LatLon};
use rtdispatch::network::{load_graph, load_landmarks, save_landmarks, select_landmarks, Router};
use rtdispatch::planner::DecisionRecord;
use rtdispatch::sim::{
    compare_policies, load_scenario, run_replay, write_replay_csv, write_replay_json, write_report_csv,
    write_report_json, write_trace, BaseMetric, Policy, ScenarioConfig,
};
use rtdispatch::speed::{
    evaluate_mae, fit_profiles, load_profiles, read_speed_observations, save_profiles, SpeedModel, SpeedProfiles,
};
use rtdispatch::survival::io::{is_incident_table, load_model, model_to_string, read_incidents, read_observations};
use rtdispatch::survival::{
    fit_batch, update_streaming, BatchFitOptions, FeatureSchema, StreamingOptions, SurvivalDataset,
};
use rtdispatch::synth::{generate_synthetic_city, write_city, CityParams};
use rtdispatch::time::{format_timestamp, parse_timestamp, CACHE_BIN_MINUTES};
use rtdispatch::{Error, Result};

use crate::{Cli, Command, GenCityArgs, PolicyArg, RegionArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::FitIncidents {
            incidents,
            out,
            features,
            region,
        } => fit_incidents(cli, incidents, &output(cli, out), features.as_deref(), region),
        Command::UpdateIncidents {
            model,
            stream,
            out,
            step,
            max_iter,
            region,
        } => {
            let opts = StreamingOptions {
                step: *step,
                max_iter: *max_iter,
            };
            update_incidents(cli, model, stream, &output(cli, out), &opts, region)
        }
        Command::FitSpeeds {
            graph,
            observations,
            out,
            bin_width,
        } => fit_speeds(graph, observations, &output(cli, out), *bin_width),
        Command::BuildLandmarks { graph, k, out } => {
            build_landmarks(graph, *k, cli.seed.unwrap_or(0), &output(cli, out))
        }
        Command::Route {
            graph,
            speeds,
            landmarks,
            from,
            to,
            time,
        } => route(cli, graph, speeds.as_deref(), landmarks.as_deref(), from, to, time),
        Command::Simulate { policy } => simulate(cli, *policy),
        Command::Compare => compare(cli),
        Command::GenCity(args) => gen_city(cli, args),
    }
}

fn output(cli: &Cli, path: &Path) -> PathBuf {
    match &cli.out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("missing file {}", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn parse_latlon(s: &str) -> Result<LatLon> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [lat, lon] => {
            let lat = lat
                .parse()
                .map_err(|_| Error::Config(format!("bad latitude in {s:?}")))?;
            let lon = lon
                .parse()
                .map_err(|_| Error::Config(format!("bad longitude in {s:?}")))?;
            Ok(LatLon::new(lat, lon))
        }
        _ => Err(Error::Config(format!("expected lat,lon, got {s:?}"))),
    }
}

/// Grid from `--region`, else from the scenario file's region, if either is given.
fn grid_for(cli: &Cli, region: &RegionArgs) -> Result<Option<Grid>> {
    if let Some(r) = &region.region {
        let v: Vec<f64> = r
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad region {r:?}")))?;
        let [a, b, c, d] = v[..] else {
            return Err(Error::Config(format!("region needs four numbers, got {r:?}")));
        };
        return Ok(Some(build_grid(BoundingBox::new(a, b, c, d)?, region.cell_size)?));
    }
    if let Some(path) = &cli.config {
        let config = ScenarioConfig::load(path, &cli.overrides)?;
        return Ok(Some(build_grid(config.region.bbox()?, config.region.cell_size_m)?));
    }
    Ok(None)
}

fn is_blank(path: &Path) -> Result<bool> {
    Ok(fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .trim()
        .is_empty())
}

/// Observations for `schema` from an incident log (needs a grid) or a table.
fn load_observations(path: &Path, grid: Option<&Grid>, schema: &FeatureSchema) -> Result<SurvivalDataset> {
    if is_blank(path)? {
        return Ok(SurvivalDataset::default());
    }
    if is_incident_table(path)? {
        let grid =
            grid.ok_or_else(|| Error::Config("incident logs need a region: pass --region or --config".into()))?;
        let incidents = read_incidents(path, grid)?;
        return Ok(SurvivalDataset::from_incidents(&incidents, grid, schema));
    }
    let (names, data) = read_observations(path)?;
    if names != schema.names() {
        return Err(Error::Schema(format!(
            "{} has {} features, model has {}",
            path.display(),
            names.len(),
            schema.len()
        )));
    }
    Ok(data)
}

fn fit_incidents(cli: &Cli, input: &Path, out: &Path, features: Option<&str>, region: &RegionArgs) -> Result<()> {
    require(input)?;
    let grid = grid_for(cli, region)?;
    let schema = match features {
        Some(list) => FeatureSchema::from_names(&list.split(',').map(str::trim).collect::<Vec<_>>())?,
        None if !is_blank(input)? && !is_incident_table(input)? => {
            FeatureSchema::from_names(&read_observations(input)?.0)?
        }
        None => FeatureSchema::standard(),
    };
    let data = load_observations(input, grid.as_ref(), &schema)?;
    let started = Instant::now();
    let fit = fit_batch(&schema, &data, &vec![0.0; schema.len()], &BatchFitOptions::default())?;
    ensure_parent(out)?;
    rtdispatch::survival::io::save_model(out, &fit.model)?;
    println!(
        "fitted {} coefficients on {} observations: log-likelihood {:.6}, {} iterations{}, {} ms",
        schema.len(),
        data.len(),
        fit.log_likelihood,
        fit.iterations,
        if fit.converged { "" } else { " (not converged)" },
        started.elapsed().as_millis()
    );
    if cli.verbose > 0 {
        for (name, b) in schema.names().iter().zip(&fit.model.beta) {
            eprintln!("  {name} = {b}");
        }
    }
    Ok(())
}

fn update_incidents(
    cli: &Cli,
    model_path: &Path,
    stream: &Path,
    out: &Path,
    opts: &StreamingOptions,
    region: &RegionArgs,
) -> Result<()> {
    require(model_path)?;
    require(stream)?;
    let original = fs::read_to_string(model_path).map_err(|e| Error::io(model_path, e))?;
    let model = load_model(model_path)?;
    let grid = grid_for(cli, region)?;
    let data = load_observations(stream, grid.as_ref(), &model.schema)?;
    ensure_parent(out)?;
    if data.is_empty() {
        fs::write(out, &original).map_err(|e| Error::io(out, e))?;
        println!("empty stream; model unchanged");
        return Ok(());
    }
    let started = Instant::now();
    let outcome = update_streaming(&model, &data, opts)?;
    let elapsed = started.elapsed();
    fs::write(out, model_to_string(&outcome.model)).map_err(|e| Error::io(out, e))?;
    println!("stream log-likelihood before: {:.6}", outcome.initial_log_likelihood);
    println!("stream log-likelihood after:  {:.6}", outcome.log_likelihood);
    println!(
        "{} steps ({:?}) on {} observations in {} ms",
        outcome.steps,
        outcome.stop,
        data.len(),
        elapsed.as_millis()
    );
    Ok(())
}

fn fit_speeds(graph: &Path, observations: &Path, out: &Path, bin_width: u32) -> Result<()> {
    require(graph)?;
    require(observations)?;
    let graph = load_graph(graph)?;
    let obs = read_speed_observations(observations)?;
    let profiles = fit_profiles(&obs, &graph, bin_width)?;
    ensure_parent(out)?;
    save_profiles(out, &profiles)?;
    println!(
        "fitted {} segment profiles from {} observations; training MAE {:.3} mph",
        profiles.len(),
        obs.len(),
        evaluate_mae(&profiles, &obs)?
    );
    Ok(())
}

fn build_landmarks(graph: &Path, k: usize, seed: u64, out: &Path) -> Result<()> {
    require(graph)?;
    let graph = load_graph(graph)?;
    if k == 0 || k > graph.node_count() {
        return Err(Error::Config(format!("k must be in 1..={}", graph.node_count())));
    }
    let table = select_landmarks(&graph, k, seed)?;
    ensure_parent(out)?;
    save_landmarks(out, &graph, &table)?;
    let ids: Vec<String> = table.landmarks.iter().map(|&i| graph.node(i).id.to_string()).collect();
    println!("{} landmarks: {}", ids.len(), ids.join(" "));
    Ok(())
}

fn route(
    cli: &Cli,
    graph_path: &Path,
    speeds: Option<&Path>,
    landmarks: Option<&Path>,
    from: &str,
    to: &str,
    time: &str,
) -> Result<()> {
    require(graph_path)?;
    let graph = Arc::new(load_graph(graph_path)?);
    let speeds: Arc<dyn SpeedModel> = match speeds {
        Some(p) => {
            require(p)?;
            Arc::new(load_profiles(p, &graph)?)
        }
        None => Arc::new(SpeedProfiles::freeflow(&graph, CACHE_BIN_MINUTES)?),
    };
    let table = match landmarks {
        Some(p) => {
            require(p)?;
            load_landmarks(p, &graph)?
        }
        None => select_landmarks(&graph, 16.min(graph.node_count()), cli.seed.unwrap_or(0))?,
    };
    let router = Router::new(graph.clone(), Arc::new(table), speeds)?;
    let depart = parse_timestamp(time)?;
    let route = router.route_between(&parse_latlon(from)?, &parse_latlon(to)?, depart)?;
    let ids: Vec<String> = route.nodes.iter().map(u64::to_string).collect();
    println!("path: {}", ids.join(" "));
    println!("seconds: {}", route.travel_time_s);
    if cli.verbose > 0 {
        eprintln!(
            "departure {}, {} nodes settled",
            format_timestamp(depart),
            route.settled
        );
    }
    Ok(())
}

/// Scenario config with overrides applied; returns it with the directory its
/// relative inputs are resolved against.
fn scenario_config(cli: &Cli) -> Result<(ScenarioConfig, PathBuf)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config <scenario.toml>".into()))?;
    require(path)?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = ScenarioConfig::load(path, &overrides)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

struct Outputs {
    csv: PathBuf,
    json: PathBuf,
    trace: PathBuf,
    cache: Option<PathBuf>,
}

fn outputs(cli: &Cli, config: &ScenarioConfig, base: &Path, stem: &str) -> Outputs {
    let mut o = config.clone();
    let out_base = cli.out_dir.clone().unwrap_or_else(|| base.to_path_buf());
    o.resolve_outputs(&out_base);
    Outputs {
        csv: o
            .output
            .report_csv
            .unwrap_or_else(|| out_base.join(format!("{stem}.csv"))),
        json: o
            .output
            .report_json
            .unwrap_or_else(|| out_base.join(format!("{stem}.json"))),
        trace: o.output.trace.unwrap_or_else(|| out_base.join("trace.jsonl")),
        cache: o.output.cache,
    }
}

fn finish(cli: &Cli, out: &Outputs, trace: &[DecisionRecord], scenario: &rtdispatch::sim::Scenario) -> Result<()> {
    if cli.trace {
        write_trace(&out.trace, trace)?;
        println!("trace: {}", out.trace.display());
    }
    if let Some(path) = &out.cache {
        ensure_parent(path)?;
        scenario.travel.cache().save(path)?;
    }
    if cli.verbose > 0 {
        let c = scenario.travel.cache();
        eprintln!(
            "travel-time cache: {} entries, {} hits, {} misses",
            c.len(),
            c.hits(),
            c.misses()
        );
    }
    Ok(())
}

fn simulate(cli: &Cli, policy: PolicyArg) -> Result<()> {
    let (config, base) = scenario_config(cli)?;
    let echo = config.to_toml();
    let out = outputs(cli, &config, &base, "replay");
    let mut resolved = config.clone();
    resolved.resolve_inputs(&base)?;
    let scenario = load_scenario(&resolved)?;
    let policy = match policy {
        PolicyArg::Planner => Policy::Planner,
        PolicyArg::Base => Policy::Base(scenario.base_metric),
    };
    let replay = run_replay(&scenario, policy, cli.trace)?;
    write_replay_csv(&out.csv, &echo, &replay)?;
    write_replay_json(&out.json, &config, &replay)?;
    println!(
        "{} incidents, mean response {:.2} s, mean decision time {:.4} s",
        replay.outcomes.len(),
        replay.mean_response_time(),
        replay.mean_decision_seconds()
    );
    println!("report: {} {}", out.csv.display(), out.json.display());
    finish(cli, &out, &replay.trace, &scenario)
}

fn compare(cli: &Cli) -> Result<()> {
    let (config, base) = scenario_config(cli)?;
    let echo = config.to_toml();
    let out = outputs(cli, &config, &base, "report");
    let mut resolved = config.clone();
    resolved.resolve_inputs(&base)?;
    let scenario = load_scenario(&resolved)?;
    let (report, planner) = compare_policies(&scenario, cli.trace)?;
    write_report_csv(&out.csv, &echo, &report)?;
    write_report_json(&out.json, &config, &report)?;
    let base_name = match scenario.base_metric {
        BaseMetric::Euclidean => "euclidean",
        BaseMetric::TravelTime => "travel-time",
    };
    println!("incidents: {}", report.incidents.len());
    println!("impacted: {}", report.impacted_count);
    println!("mean savings on impacted: {:.3} s", report.mean_savings_on_impacted);
    println!(
        "mean response: base ({base_name}) {:.3} s, planner {:.3} s",
        report.mean_response_time_base, report.mean_response_time_policy
    );
    println!("mean decision time: {:.4} s", report.mean_decision_compute_time);
    println!("report: {} {}", out.csv.display(), out.json.display());
    finish(cli, &out, &planner.trace, &scenario)
}

fn gen_city(cli: &Cli, args: &GenCityArgs) -> Result<()> {
    let mut params = match &args.params {
        Some(p) => {
            require(p)?;
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<CityParams>(&text)
                .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => CityParams::default(),
    };
    macro_rules! set {
        ($field:ident, $arg:expr) => {
            if let Some(v) = $arg {
                params.$field = v;
            }
        };
    }
    set!(seed, cli.seed);
    set!(n_nodes, args.nodes);
    set!(grid_cols, args.cols);
    set!(grid_rows, args.rows);
    set!(n_depots, args.depots);
    set!(incidents_per_hour, args.rate);
    set!(n_incidents, args.incidents);
    set!(replay_incidents, args.replay);
    set!(hotspots, args.hotspots);
    if args.responders.is_some() {
        params.responders = args.responders;
    }
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("city"));
    let city = generate_synthetic_city(&params)?;
    let scenario = write_city(&city, &dir)?;
    println!(
        "{} nodes, {} edges, {} cells, {} incidents, {} depots",
        city.graph.node_count(),
        city.graph.edge_count(),
        city.grid.len(),
        city.incidents.len(),
        city.depots.len()
    );
    println!("scenario: {}", scenario.display());
    Ok(())
}
