//! Binary PGM debug images of stored episodes and their Q maps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{io_err, HarnessError, ModelPolicy};
use crate::data::Dataset;
use crate::grid::{read_grid_file, GridMap};
use crate::model::{ee_kernels, forward_q_with};
use crate::policy::select_action;
use crate::repr::EndEffectorRepr;

/// Write `values` (row-major, `width x height`) as 8-bit grey, mapping
/// `[lo, hi]` to `[0, 255]`. `mark` draws a small cross with a dark center.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f32], lo: f32, hi: f32, mark: Option<(usize, usize)>) -> Result<(), HarnessError> {
    assert_eq!(values.len(), width * height);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut px: Vec<u8> = values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    if let Some((r, c)) = mark {
        for d in -2i64..=2 {
            for (rr, cc) in [(r as i64 + d, c as i64), (r as i64, c as i64 + d)] {
                if (0..height as i64).contains(&rr) && (0..width as i64).contains(&cc) {
                    px[rr as usize * width + cc as usize] = if d == 0 { 0 } else { 255 };
                }
            }
        }
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(px);
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn range_of(values: &[f32]) -> (f32, f32) {
    values.iter().fold((0.0f32, 0.0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn write_map(path: PathBuf, m: &GridMap, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let (lo, hi) = range_of(&m.values);
    write_pgm(&path, m.width, m.height, &m.values, lo, hi, None)?;
    out.push(path);
    Ok(())
}

/// Render every stored step of `episode_id`: the scene, the four
/// end-effector channels and, given a model, one image per rotation slot of
/// the Q map with the greedy action marked. Returns the written files.
pub fn render_episode(ds: &Dataset, episode_id: &str, out_dir: &Path, model: Option<&ModelPolicy>) -> Result<Vec<PathBuf>, HarnessError> {
    let records: Vec<_> = ds.records.iter().filter(|r| r.episode_id == episode_id).collect();
    if records.is_empty() {
        return Err(HarnessError::Usage(format!("episode {episode_id} is not in the store")));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut out = Vec::new();
    let mut summary = String::from("step\ttask\taction\tlabel\n");
    for r in records {
        let stem = format!("{episode_id}_s{}", r.step_index);
        let _ = writeln!(summary, "{}\t{}\t{}\t{}", r.step_index, r.task, r.action, r.success as u8);
        let scene = ds.load_scene(r)?;
        let h = &scene.height;
        write_map(out_dir.join(format!("{stem}_scene.pgm")), h, &mut out)?;
        let (lo, hi) = range_of(&h.values);
        let path = out_dir.join(format!("{stem}_scene_action.pgm"));
        write_pgm(&path, h.width, h.height, &h.values, lo, hi, Some((r.action.i, r.action.j)))?;
        out.push(path);

        let ee = EndEffectorRepr::from_tensor(&read_grid_file(&ds.root().join(&r.ee_path))?)?;
        for (name, m) in ["depth_open", "mask_open", "depth_closed", "mask_closed"].iter().zip(ee.channels()) {
            write_map(out_dir.join(format!("{stem}_ee_{name}.pgm")), m, &mut out)?;
        }

        if let Some(model) = model {
            let kind = r.kind();
            let net = model.ckpt.net(kind.net())?;
            let q = forward_q_with(&ee_kernels(&ee, net, kind.angle_range())?, &scene, net)?;
            let best = select_action(&q);
            let k_total = q.rotations();
            let res = q.probs.shape()[0];
            for k in 0..k_total {
                let slice: Vec<f32> = (0..res * res).map(|p| q.probs.data()[p * k_total + k]).collect();
                let mark = (k == best.k).then_some((best.i, best.j));
                let path = out_dir.join(format!("{stem}_q_k{k:02}.pgm"));
                write_pgm(&path, res, res, &slice, 0.0, 1.0, mark)?;
                out.push(path);
            }
            let _ = writeln!(summary, "#\tgreedy\t{best}\t-");
        }
    }
    let path = out_dir.join(format!("{episode_id}_steps.tsv"));
    std::fs::write(&path, summary).map_err(io_err(&path))?;
    out.push(path);
    Ok(out)
}
