//! `gcdn analyze …` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use gcdn::analysis::{
    distance_map, edge_accuracy, feature_dft, layer_graphs, receptive_field, true_graph, write_heatmap, Table,
};
use gcdn::graph_conv::memory_report;
use gcdn::image::{load_image, save_image, GrayImage};
use gcdn::network::{block_names, ForwardTrace};
use gcdn::noise::add_awgn;

use crate::options::ModelFlags;
use crate::{io_error, load_checkpoint, write_output, CliResult, Failure};

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    /// Input pixels that can influence one output pixel.
    ReceptiveField(ReceptiveArgs),
    /// Feature-space distances around one pixel at one layer.
    DistanceMap(DistanceArgs),
    /// Log-magnitude spectra of a block's output feature maps.
    FeatureDft(DftArgs),
    /// Overlap of hidden-layer graphs with graphs of the clean image.
    EdgeAccuracy(EdgeArgs),
    /// Bytes needed for per-edge aggregation weights.
    MemoryReport(MemoryArgs),
}

#[derive(Args)]
pub struct ModelInput {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image fed to the network.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ReceptiveArgs {
    #[command(flatten)]
    io: ModelInput,
    /// Target pixel as `row,col`.
    #[arg(long, value_parser = parse_pixel)]
    pixel: (usize, usize),
    /// Layer whose pixels are reported.
    #[arg(long, default_value = "input")]
    from: String,
    /// Layer holding the target pixel.
    #[arg(long, default_value = "output")]
    to: String,
}

#[derive(Args)]
pub struct DistanceArgs {
    #[command(flatten)]
    io: ModelInput,
    #[arg(long, value_parser = parse_pixel)]
    pixel: (usize, usize),
    /// Layer whose features are compared.
    #[arg(long, default_value = "hpf")]
    layer: String,
    /// Window side; the model's search window when absent.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
pub struct DftArgs {
    #[command(flatten)]
    io: ModelInput,
    /// `hpf` or `lpfN`.
    #[arg(long, default_value = "hpf")]
    block: String,
}

#[derive(Args)]
pub struct EdgeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Clean image the reference graphs are built from.
    #[arg(long)]
    clean: PathBuf,
    /// Noisy network input; noise is synthesised from the clean image when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Noise level for the synthesised input; the training level when absent.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference neighbour counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    k_true: Vec<usize>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MemoryArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Pixels per image; the patch area when absent.
    #[arg(long)]
    nodes: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (y, x) = s.split_once(',').ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("invalid coordinate {v:?}"));
    Ok((num(y)?, num(x)?))
}

fn prepare_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn find_layer<'a>(trace: &'a ForwardTrace<f32>, name: &str) -> CliResult<&'a gcdn::network::LayerRecord<f32>> {
    trace.records.iter().find(|r| r.name == name).ok_or_else(|| {
        let names: Vec<&str> = trace.records.iter().map(|r| r.name.as_str()).collect();
        Failure::Usage(format!("unknown layer {name:?}; available: {}", names.join(", ")))
    })
}

fn kv_table(rows: &[(&str, String)]) -> CliResult<Table> {
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in rows {
        t.push(vec![k.to_string(), v.clone()])?;
    }
    Ok(t)
}

fn receptive(a: ReceptiveArgs) -> CliResult {
    let ck = load_checkpoint(&a.io.checkpoint)?;
    let img = load_image(&a.io.input)?;
    let trace = ck.model.trace(&img)?;
    let node = |name: &str| {
        trace
            .program
            .find(name)
            .ok_or_else(|| Failure::Usage(format!("unknown layer {name:?}")))
    };
    let (start, end) = (node(&a.from)?, node(&a.to)?);
    let (y, x) = a.pixel;
    let mask = receptive_field(&trace.program, y, x, end, start)?;
    prepare_dir(&a.io.out)?;
    save_image(a.io.out.join("mask.pgm"), &mask.overlay(&img)?)?;
    let bounds = mask
        .bounds()
        .map(|(y0, x0, y1, x1)| format!("{y0},{x0}-{y1},{x1}"))
        .unwrap_or_else(|| "none".into());
    let t = kv_table(&[
        ("pixel", format!("{y},{x}")),
        ("from", a.from.clone()),
        ("to", a.to.clone()),
        ("pixels", mask.count().to_string()),
        ("bounds", bounds),
    ])?;
    t.write(a.io.out.join("receptive_field.tsv"))?;
    Ok(())
}

fn distance(a: DistanceArgs) -> CliResult {
    let ck = load_checkpoint(&a.io.checkpoint)?;
    let img = load_image(&a.io.input)?;
    let trace = ck.model.trace(&img)?;
    let layer = find_layer(&trace, &a.layer)?;
    let (y, x) = a.pixel;
    let window = a.window.unwrap_or(ck.model.config().window);
    let map = distance_map(&layer.features, y, x, window)?;
    prepare_dir(&a.io.out)?;
    write_heatmap(a.io.out.join("distance.pgm"), &map.values, map.height, map.width)?;
    let mut t = Table::new(&["row", "col", "distance"]);
    for wy in 0..map.height {
        for wx in 0..map.width {
            t.push(vec![
                (map.y0 + wy).to_string(),
                (map.x0 + wx).to_string(),
                format!("{:.9e}", map.values[wy * map.width + wx]),
            ])?;
        }
    }
    t.write(a.io.out.join("distance.tsv"))?;
    if let Some(j) = map.nearest_candidate(img.width()) {
        eprintln!("nearest candidate: {},{}", j / img.width(), j % img.width());
    }
    Ok(())
}

fn dft(a: DftArgs) -> CliResult {
    let ck = load_checkpoint(&a.io.checkpoint)?;
    let blocks = block_names(ck.model.config());
    if !blocks.contains(&a.block) {
        return Err(Failure::Usage(format!("unknown block {:?}; available: {}", a.block, blocks.join(", "))));
    }
    let img = load_image(&a.io.input)?;
    let trace = ck.model.trace(&img)?;
    let dft = feature_dft(&find_layer(&trace, &a.block)?.features)?;
    prepare_dir(&a.io.out)?;
    let mut t = Table::new(&["channel", "low_frequency_ratio"]);
    for (c, (mag, ratio)) in dft.log_magnitude.iter().zip(&dft.low_ratio).enumerate() {
        write_heatmap(a.io.out.join(format!("channel{c:03}.pgm")), mag, dft.height, dft.width)?;
        t.push(vec![c.to_string(), format!("{ratio:.6}")])?;
    }
    t.push(vec!["mean".into(), format!("{:.6}", dft.mean_low_ratio())])?;
    t.write(a.io.out.join("feature_dft.tsv"))?;
    Ok(())
}

fn edges(a: EdgeArgs) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let clean = load_image(&a.clean)?;
    let noisy: GrayImage = match &a.input {
        Some(p) => load_image(p)?,
        None => add_awgn(&clean, a.sigma.unwrap_or(ck.model.config().sigma), a.seed)?,
    };
    let trace = ck.model.trace(&noisy)?;
    let mut t = Table::new(&["layer", "k_true", "accuracy_percent"]);
    for (name, graphs) in layer_graphs(&trace) {
        let predicted = &graphs[0];
        for &k in &a.k_true {
            let truth = true_graph(&clean, k, predicted.mode())?;
            t.push(vec![name.clone(), k.to_string(), format!("{:.3}", edge_accuracy(&truth, predicted)?)])?;
        }
    }
    write_output(a.out.as_deref(), &t.to_tsv())
}

fn memory(a: MemoryArgs) -> CliResult {
    let cfg = a.model.layered()?;
    let nodes = a.nodes.unwrap_or((cfg.patch * cfg.patch) as u64);
    let (b, k, f, r) = (cfg.batch as u64, cfg.knn as u64, cfg.features as u64, cfg.rank as u64);
    let m = memory_report(b, nodes, k, f, f, r)?;
    let t = kv_table(&[
        ("batch", b.to_string()),
        ("nodes", nodes.to_string()),
        ("knn", k.to_string()),
        ("features", f.to_string()),
        ("rank", r.to_string()),
        ("edges", m.edges.to_string()),
        ("full_rank_bytes", m.full_rank_bytes.to_string()),
        ("low_rank_bytes", m.low_rank_bytes.to_string()),
        ("ratio", format!("{:.4}", m.ratio())),
    ])?;
    write_output(a.out.as_deref(), &t.to_tsv())
}

pub fn run(cmd: AnalyzeCommand) -> CliResult {
    match cmd {
        AnalyzeCommand::ReceptiveField(a) => receptive(a),
        AnalyzeCommand::DistanceMap(a) => distance(a),
        AnalyzeCommand::FeatureDft(a) => dft(a),
        AnalyzeCommand::EdgeAccuracy(a) => edges(a),
        AnalyzeCommand::MemoryReport(a) => memory(a),
    }
}
