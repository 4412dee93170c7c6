use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use voxrecon_core::config::Config;
use voxrecon_core::eval::{error_stats, point_errors, storage_report, surface_area, ErrorStats};
use voxrecon_core::fusion::{self, DepthMap, FusionError, FusionStats, Pose};
use voxrecon_core::io;
use voxrecon_core::mesh::{extract_mesh, TriangleMesh};
use voxrecon_core::regularizer::{regularize, RegStats};
use voxrecon_core::stereo::{
    cost_volume, diffusion_tensor, disparity_false_color, disparity_to_depth, tgv_disparity,
    GrayImage,
};
use voxrecon_core::synth;
use voxrecon_core::voxel::{self, BlockMap, StoreError};

use crate::{CliError, Command, CommonArgs};

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Budget exhaustion is a resource error (exit 3); everything else from
/// fusion is a data problem.
fn fusion_err(e: FusionError) -> CliError {
    match e {
        FusionError::Store(StoreError::BudgetExceeded { .. }) => CliError::Resource(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

/// Config precedence: explicit --config, else a `config.cfg` next to the
/// dataset, else defaults; CLI flags override in all cases.
fn resolve_config(common: &CommonArgs, dataset_fallback: Option<&Path>) -> Result<Config, CliError> {
    let mut cfg = if let Some(path) = &common.config {
        Config::load(path).map_err(data_err)?
    } else if let Some(dir) = dataset_fallback {
        let candidate = dir.join("config.cfg");
        if candidate.is_file() {
            Config::load(&candidate).map_err(data_err)?
        } else {
            Config::default()
        }
    } else {
        Config::default()
    };
    if let Some(v) = common.voxel_size {
        cfg.voxel_size = v;
        // Re-derive the coupled defaults unless the file pinned them.
    }
    if let Some(v) = common.iters_3d {
        cfg.iters_3d = v;
    }
    if let Some(v) = common.iters_2d {
        cfg.iters_2d = v;
    }
    if let Some(v) = common.min_weight {
        cfg.min_weight = v;
    }
    if let Some(v) = common.max_range {
        cfg.max_range = v;
    }
    cfg.validate().map_err(data_err)?;
    Ok(cfg)
}

pub fn run(command: Command, common: &CommonArgs) -> Result<(), CliError> {
    match command {
        Command::Gen {
            scene,
            frames,
            noise,
            stereo,
            out,
        } => gen(common, &scene, frames, noise, stereo, &out),
        Command::Stereo {
            left_dir,
            right_dir,
            out,
            preview,
        } => {
            let cfg = resolve_config(common, None)?;
            stereo_dirs(&cfg, &left_dir, &right_dir, &out, preview)
        }
        Command::Fuse {
            depth_dir,
            poses,
            out,
        } => {
            let cfg = resolve_config(common, None)?;
            let map = fuse(&cfg, &depth_dir, &poses, &out)?;
            let report = storage_report(&map);
            println!(
                "fused {} blocks ({} voxels), snapshot {} bytes",
                report.block_count, report.voxel_count, report.snapshot_bytes
            );
            Ok(())
        }
        Command::Regularize { input, out } => {
            let cfg = resolve_config(common, None)?;
            let stats = regularize_snapshot(&cfg, &input, &out)?;
            println!(
                "energy {} -> {} over {} iterations",
                stats.initial_energy, stats.final_energy, stats.iterations
            );
            Ok(())
        }
        Command::Extract { input, out, xyz } => {
            let cfg = resolve_config(common, None)?;
            let mesh = extract_snapshot(&cfg, &input, &out)?;
            if let Some(xyz_path) = xyz {
                io::export_xyz_file(&mesh, &xyz_path).map_err(data_err)?;
            }
            println!(
                "extracted {} vertices, {} triangles",
                mesh.vertices.len(),
                mesh.triangles.len()
            );
            Ok(())
        }
        Command::Eval {
            mesh,
            reference,
            histogram,
            out,
        } => {
            let stats = eval_mesh(&mesh, &reference, histogram.as_deref())?;
            let text = render_error_stats(&stats);
            print!("{text}");
            let stats_path = out.unwrap_or_else(|| with_suffix(&mesh, ".stats"));
            fs::write(stats_path, text).map_err(data_err)?;
            Ok(())
        }
        Command::Info { input } => {
            let map = voxel::load_snapshot_file(&input).map_err(data_err)?;
            let report = storage_report(&map);
            print!("{}", render_storage(&report));
            Ok(())
        }
        Command::Pipeline { data, out } => {
            let cfg = resolve_config(common, Some(&data))?;
            pipeline(&cfg, &data, &out)
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Sorted files with one of the given extensions.
fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no {exts:?} files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn read_depth_any(path: &Path) -> Result<DepthMap, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => io::read_pfm_file(path).map_err(data_err),
        Some("png") => io::read_depth_png(path).map_err(data_err),
        other => Err(CliError::Data(format!(
            "unsupported depth extension {other:?} for {}",
            path.display()
        ))),
    }
}

fn write_stats_file(path: &Path, pairs: &[(&str, String)]) -> Result<(), CliError> {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    fs::write(path, s).map_err(data_err)
}

fn gen(
    common: &CommonArgs,
    scene: &str,
    frames: usize,
    noise: f64,
    stereo: bool,
    out: &Path,
) -> Result<(), CliError> {
    let dataset = synth::dataset_by_name(scene, frames).map_err(data_err)?;
    fs::create_dir_all(out).map_err(data_err)?;
    synth::write_dataset(&dataset, out, noise, common.seed, stereo).map_err(data_err)?;

    // Record the dataset's intrinsics so later stages pick them up.
    let mut cfg = resolve_config(common, None)?;
    cfg.fx = dataset.cam.fx;
    cfg.fy = dataset.cam.fy;
    cfg.cx = dataset.cam.cx;
    cfg.cy = dataset.cam.cy;
    cfg.width = dataset.cam.width;
    cfg.height = dataset.cam.height;
    cfg.baseline = dataset.cam.baseline;
    cfg.save(out.join("config.cfg")).map_err(data_err)?;
    println!(
        "generated {} frames of {scene:?} into {}",
        dataset.poses.len(),
        out.display()
    );
    Ok(())
}

fn stereo_dirs(
    cfg: &Config,
    left_dir: &Path,
    right_dir: &Path,
    out: &Path,
    preview: bool,
) -> Result<(), CliError> {
    let lefts = list_files(left_dir, &["png", "pgm"])?;
    let rights = list_files(right_dir, &["png", "pgm"])?;
    if lefts.len() != rights.len() {
        return Err(CliError::Data(format!(
            "stereo pair count mismatch: {} left vs {} right",
            lefts.len(),
            rights.len()
        )));
    }
    let depth_dir = out.join("depth");
    let disp_dir = out.join("disparity");
    fs::create_dir_all(&depth_dir).map_err(data_err)?;
    fs::create_dir_all(&disp_dir).map_err(data_err)?;
    let cam = cfg.camera().map_err(data_err)?;
    let params = cfg.stereo_params();

    for (l, r) in lefts.iter().zip(rights.iter()) {
        let left = GrayImage::load(l).map_err(data_err)?;
        let right = GrayImage::load(r).map_err(data_err)?;
        let volume = cost_volume(&left, &right, &params).map_err(data_err)?;
        let tensor = diffusion_tensor(&right, params.beta, params.gamma);
        let disp = tgv_disparity(&volume, &tensor, &params).map_err(data_err)?;
        let depth = disparity_to_depth(&disp, &cam);

        let stem = r
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("frame")
            .to_string();
        io::write_pfm_file(&depth, depth_dir.join(format!("{stem}.pfm"))).map_err(data_err)?;
        let disp_as_depth =
            DepthMap::from_data(disp.width, disp.height, disp.d.clone()).expect("same size");
        io::write_pfm_file(&disp_as_depth, disp_dir.join(format!("{stem}.pfm")))
            .map_err(data_err)?;
        if preview {
            disparity_false_color(&disp, disp_dir.join(format!("{stem}.png")))
                .map_err(data_err)?;
        }
        println!("stereo {stem}: {}x{}", disp.width, disp.height);
    }
    Ok(())
}

fn fuse(cfg: &Config, depth_dir: &Path, poses_path: &Path, out: &Path) -> Result<BlockMap, CliError> {
    let depth_files = list_files(depth_dir, &["pfm", "png"])?;
    let poses: Vec<Pose> = io::read_poses_file(poses_path).map_err(data_err)?;
    if depth_files.len() != poses.len() {
        return Err(CliError::Data(format!(
            "{} depth maps but {} poses",
            depth_files.len(),
            poses.len()
        )));
    }
    let cam = cfg.camera().map_err(data_err)?;
    let params = cfg.fusion_params();

    let mut map = match cfg.table_size {
        Some(n) => BlockMap::with_table_size(cfg.voxel_size, nalgebra_zero(), n),
        None => BlockMap::new(cfg.voxel_size, nalgebra_zero()),
    }
    .map_err(data_err)?;
    map.set_memory_budget(cfg.memory_budget);

    let mut totals = FusionStats::default();
    for (depth_file, pose) in depth_files.iter().zip(poses.iter()) {
        let depth = read_depth_any(depth_file)?;
        let stats =
            fusion::integrate_depth_map(&mut map, &depth, &cam, pose, &params).map_err(fusion_err)?;
        totals.voxels_updated += stats.voxels_updated;
        totals.pixels_skipped += stats.pixels_skipped;
        totals.blocks_allocated = stats.blocks_allocated;
    }

    voxel::save_snapshot_file(&map, out).map_err(data_err)?;
    let report = storage_report(&map);
    write_stats_file(
        &with_suffix(out, ".stats"),
        &[
            ("frames", depth_files.len().to_string()),
            ("blocks", report.block_count.to_string()),
            ("voxels", report.voxel_count.to_string()),
            ("voxels_updated", totals.voxels_updated.to_string()),
            ("pixels_skipped", totals.pixels_skipped.to_string()),
            ("snapshot_bytes", report.snapshot_bytes.to_string()),
            ("dense_bounding_bytes", report.dense_bounding_bytes.to_string()),
            ("compression_ratio", report.compression_ratio.to_string()),
        ],
    )?;
    Ok(map)
}

fn nalgebra_zero() -> voxrecon_core::nalgebra::Vector3<f64> {
    voxrecon_core::nalgebra::Vector3::zeros()
}

fn regularize_snapshot(cfg: &Config, input: &Path, out: &Path) -> Result<RegStats, CliError> {
    let mut map = voxel::load_snapshot_file(input).map_err(data_err)?;
    let stats = regularize(&mut map, &cfg.reg_params()).map_err(data_err)?;
    voxel::save_snapshot_file(&map, out).map_err(data_err)?;
    write_stats_file(
        &with_suffix(out, ".stats"),
        &[
            ("iterations", stats.iterations.to_string()),
            ("observed_voxels", stats.observed_voxels.to_string()),
            ("initial_energy", stats.initial_energy.to_string()),
            ("final_energy", stats.final_energy.to_string()),
            ("max_dual_norm", stats.max_dual_norm.to_string()),
        ],
    )?;
    Ok(stats)
}

fn extract_snapshot(cfg: &Config, input: &Path, out: &Path) -> Result<TriangleMesh, CliError> {
    let map = voxel::load_snapshot_file(input).map_err(data_err)?;
    let mesh = extract_mesh(&map, cfg.min_weight);
    io::export_ply_file(&mesh, out).map_err(data_err)?;
    write_stats_file(
        &with_suffix(out, ".stats"),
        &[
            ("vertices", mesh.vertices.len().to_string()),
            ("triangles", mesh.triangles.len().to_string()),
            ("area_m2", surface_area(&mesh).to_string()),
        ],
    )?;
    Ok(mesh)
}

fn read_reference(path: &Path) -> Result<Vec<[f64; 3]>, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => io::read_ply_points_file(path).map_err(data_err),
        Some("xyz") | Some("txt") => io::read_xyz_points_file(path).map_err(data_err),
        other => Err(CliError::Data(format!(
            "unsupported reference extension {other:?}"
        ))),
    }
}

fn eval_mesh(
    mesh_path: &Path,
    reference_path: &Path,
    histogram: Option<&Path>,
) -> Result<ErrorStats, CliError> {
    let vertices = io::read_ply_points_file(mesh_path).map_err(data_err)?;
    let mesh = TriangleMesh {
        vertices,
        triangles: Vec::new(),
        colors: None,
    };
    let reference = read_reference(reference_path)?;
    let distances = point_errors(&mesh, &reference).map_err(data_err)?;
    let stats = error_stats(&distances).map_err(data_err)?;
    if let Some(csv_path) = histogram {
        let mut csv = String::from("bin_center_cm,count\n");
        for (i, count) in stats.histogram.iter().enumerate() {
            if i < voxrecon_core::eval::HISTOGRAM_BINS {
                let _ = writeln!(csv, "{i},{count}");
            } else {
                let _ = writeln!(csv, "overflow,{count}");
            }
        }
        fs::write(csv_path, csv).map_err(data_err)?;
    }
    Ok(stats)
}

fn render_error_stats(stats: &ErrorStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "samples = {}", stats.sample_count);
    let _ = writeln!(s, "mode_cm = {}", stats.mode_cm);
    let _ = writeln!(s, "median_cm = {}", stats.median_cm);
    let _ = writeln!(s, "p75_cm = {}", stats.p75_cm);
    s
}

fn render_storage(report: &voxrecon_core::eval::StorageReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "blocks = {}", report.block_count);
    let _ = writeln!(s, "voxels = {}", report.voxel_count);
    let _ = writeln!(s, "snapshot_bytes = {}", report.snapshot_bytes);
    let _ = writeln!(s, "dense_bounding_bytes = {}", report.dense_bounding_bytes);
    let _ = writeln!(s, "compression_ratio = {}", report.compression_ratio);
    s
}

fn pipeline(cfg: &Config, data: &Path, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(data_err)?;

    // Stage 0: depth source. Prefer pre-rendered depth; fall back to
    // stereo pairs.
    let depth_dir = if data.join("depth").is_dir() {
        data.join("depth")
    } else if data.join("image_l").is_dir() && data.join("image_r").is_dir() {
        stereo_dirs(
            cfg,
            &data.join("image_l"),
            &data.join("image_r"),
            out,
            false,
        )?;
        out.join("depth")
    } else {
        return Err(CliError::Data(format!(
            "{} has neither depth/ nor image_l/ + image_r/",
            data.display()
        )));
    };
    let poses = data.join("poses.txt");
    let reference = data.join("gt_cloud.xyz");

    // Stage 1: fusion.
    let raw_snapshot = out.join("raw.hvg");
    let map = fuse(cfg, &depth_dir, &poses, &raw_snapshot)?;
    let report = storage_report(&map);
    drop(map);

    // Stage 2: raw mesh + its error.
    let raw_mesh_path = out.join("raw.ply");
    let raw_mesh = extract_snapshot(cfg, &raw_snapshot, &raw_mesh_path)?;
    let raw_area = surface_area(&raw_mesh);
    drop(raw_mesh);
    let raw_stats = eval_mesh(&raw_mesh_path, &reference, Some(&out.join("raw_hist.csv")))?;
    fs::write(out.join("raw_eval.stats"), render_error_stats(&raw_stats)).map_err(data_err)?;

    // Stage 3: regularization.
    let reg_snapshot = out.join("reg.hvg");
    let reg = regularize_snapshot(cfg, &raw_snapshot, &reg_snapshot)?;

    // Stage 4: regularized mesh + its error.
    let reg_mesh_path = out.join("reg.ply");
    let reg_mesh = extract_snapshot(cfg, &reg_snapshot, &reg_mesh_path)?;
    let reg_area = surface_area(&reg_mesh);
    drop(reg_mesh);
    let reg_stats = eval_mesh(&reg_mesh_path, &reference, Some(&out.join("reg_hist.csv")))?;
    fs::write(out.join("reg_eval.stats"), render_error_stats(&reg_stats)).map_err(data_err)?;

    let median_reduction = if raw_stats.median_cm > 0.0 {
        1.0 - reg_stats.median_cm / raw_stats.median_cm
    } else {
        0.0
    };
    write_stats_file(
        &out.join("pipeline.stats"),
        &[
            ("blocks", report.block_count.to_string()),
            ("compression_ratio", report.compression_ratio.to_string()),
            ("raw_median_cm", raw_stats.median_cm.to_string()),
            ("reg_median_cm", reg_stats.median_cm.to_string()),
            ("median_reduction", median_reduction.to_string()),
            ("raw_p75_cm", raw_stats.p75_cm.to_string()),
            ("reg_p75_cm", reg_stats.p75_cm.to_string()),
            ("raw_area_m2", raw_area.to_string()),
            ("reg_area_m2", reg_area.to_string()),
            ("initial_energy", reg.initial_energy.to_string()),
            ("final_energy", reg.final_energy.to_string()),
        ],
    )?;
    println!(
        "pipeline: median {} -> {} cm ({:.1}% reduction), area {:.1} -> {:.1} m2",
        raw_stats.median_cm,
        reg_stats.median_cm,
        100.0 * median_reduction,
        raw_area,
        reg_area
    );
    Ok(())
}
