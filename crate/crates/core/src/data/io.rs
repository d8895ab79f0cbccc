//! On-disk sample format.
//!
//! One directory per object: `manifest.json` plus `frag_<i>.bin` per
//! fragment. The binary layout is `count: u32 LE`, `count×3 f32 LE` points,
//! `count×3 f32 LE` normals, `count u8` fracture labels.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::{label_structure, Adjacency, AssemblySample, Fragment};
use crate::error::{Error, Result};
use crate::geom::{estimate_normals, PointCloud, RigidTransform};

pub const DATASET_FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: String,
    object_id: String,
    k: usize,
    seed: u64,
    eps_fracture: f64,
    eps_adjacency: f64,
    anchor_id: usize,
    areas: Vec<f64>,
    adjacency_edges: Vec<(usize, usize)>,
    gt_transforms: Vec<TransformRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r][c] = t.rotation[(r, c)];
            }
        }
        TransformRecord {
            rotation,
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TransformRecord {
    fn to_transform(&self) -> RigidTransform {
        let r = &self.rotation;
        RigidTransform::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
    }
}

pub fn write_sample(root: &Path, sample: &AssemblySample) -> Result<()> {
    sample.validate()?;
    let dir = root.join(&sample.object_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION.to_string(),
        object_id: sample.object_id.clone(),
        k: sample.k(),
        seed: sample.seed,
        eps_fracture: sample.eps_fracture,
        eps_adjacency: sample.eps_adjacency,
        anchor_id: sample.anchor_id,
        areas: sample.fragments.iter().map(|f| f.area).collect(),
        adjacency_edges: sample.adjacency.edges(),
        gt_transforms: sample.gt_transforms.iter().map(TransformRecord::from).collect(),
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Json { path: manifest_path.display().to_string(), source: e })?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(manifest_path.display().to_string(), e))?;

    for (frag, labels) in sample.fragments.iter().zip(&sample.fracture_labels) {
        let path = dir.join(format!("frag_{}.bin", frag.id));
        let mut buf: Vec<u8> = Vec::with_capacity(4 + frag.points.len() * 25);
        buf.extend_from_slice(&(frag.points.len() as u32).to_le_bytes());
        for p in &frag.points.points {
            for a in 0..3 {
                buf.extend_from_slice(&(p[a] as f32).to_le_bytes());
            }
        }
        let normals = frag.points.normals.as_ref().expect("fragments carry normals");
        for n in normals {
            for a in 0..3 {
                buf.extend_from_slice(&(n[a] as f32).to_le_bytes());
            }
        }
        buf.extend(labels.iter().map(|&l| l as u8));
        fs::write(&path, buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_sample(dir: &Path) -> Result<AssemblySample> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
        path: manifest_path.display().to_string(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: manifest_path.display().to_string(),
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION.to_string(),
        });
    }
    let k = manifest.k;
    if manifest.areas.len() != k || manifest.gt_transforms.len() != k {
        return Err(Error::SchemaViolation {
            path: manifest_path.display().to_string(),
            reason: format!("per-fragment arrays disagree with k={k}"),
        });
    }
    let adjacency =
        Adjacency::from_edges(k, &manifest.adjacency_edges).map_err(|e| Error::SchemaViolation {
            path: manifest_path.display().to_string(),
            reason: e.to_string(),
        })?;

    let mut fragments = Vec::with_capacity(k);
    let mut fracture_labels = Vec::with_capacity(k);
    for i in 0..k {
        let path = dir.join(format!("frag_{i}.bin"));
        let (cloud, labels) = read_fragment_bin(&path)?;
        fragments.push(Fragment {
            id: i,
            points: cloud,
            area: manifest.areas[i],
        });
        fracture_labels.push(labels);
    }

    let sample = AssemblySample {
        object_id: manifest.object_id,
        fragments,
        gt_transforms: manifest.gt_transforms.iter().map(|t| t.to_transform()).collect(),
        adjacency,
        fracture_labels,
        anchor_id: manifest.anchor_id,
        seed: manifest.seed,
        eps_fracture: manifest.eps_fracture,
        eps_adjacency: manifest.eps_adjacency,
    };
    sample.validate()?;
    Ok(sample)
}

fn read_fragment_bin(path: &Path) -> Result<(PointCloud, Vec<bool>)> {
    let display = path.display().to_string();
    let mut file = fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(display.clone(), e))?;

    let truncated = |section: &str| Error::Truncated {
        path: display.clone(),
        section: section.to_string(),
    };
    if bytes.len() < 4 {
        return Err(truncated("count"));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let expected = 4 + count * 12 + count * 12 + count;
    let read_vec3s = |offset: usize, section: &str| -> Result<Vec<Vector3<f64>>> {
        let end = offset + count * 12;
        if bytes.len() < end {
            return Err(truncated(section));
        }
        let mut out = Vec::with_capacity(count);
        for c in 0..count {
            let base = offset + c * 12;
            let get = |o: usize| {
                f32::from_le_bytes(bytes[base + o..base + o + 4].try_into().unwrap()) as f64
            };
            out.push(Vector3::new(get(0), get(4), get(8)));
        }
        Ok(out)
    };
    let points = read_vec3s(4, "points")?;
    let normals = read_vec3s(4 + count * 12, "normals")?;
    if bytes.len() < expected {
        return Err(truncated("labels"));
    }
    let mut labels = Vec::with_capacity(count);
    for &b in &bytes[4 + count * 24..expected] {
        match b {
            0 => labels.push(false),
            1 => labels.push(true),
            other => {
                return Err(Error::SchemaViolation {
                    path: display,
                    reason: format!("label byte {other} not in {{0,1}}"),
                })
            }
        }
    }
    // f32 rounding can leave normals a hair off unit length; renormalize.
    let normals = normals
        .into_iter()
        .map(|n| {
            let norm = n.norm();
            if norm > 0.0 {
                n / norm
            } else {
                Vector3::z()
            }
        })
        .collect();
    Ok((PointCloud::with_normals(points, normals), labels))
}

/// Import a directory of plain `.xyz` fragments (one file per fragment,
/// `x y z [nx ny nz]` per line) given in a shared assembled frame. The object
/// is centered and scaled to the unit sphere, fragments are re-centered into
/// local frames, normals are estimated when absent, and structural labels are
/// derived with [`label_structure`].
pub fn import_xyz_object(
    dir: &Path,
    eps_f: f64,
    eps_adj: f64,
    normal_neighbors: usize,
) -> Result<AssemblySample> {
    let display = dir.display().to_string();
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(display.clone(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "xyz").unwrap_or(false))
        .collect();
    files.sort();
    if files.len() < 2 {
        return Err(Error::invalid(format!(
            "{display}: need at least 2 .xyz fragments, found {}",
            files.len()
        )));
    }

    let mut world_points: Vec<Vec<Vector3<f64>>> = Vec::new();
    let mut world_normals: Vec<Option<Vec<Vector3<f64>>>> = Vec::new();
    for path in &files {
        let (pts, ns) = read_xyz(path)?;
        world_points.push(pts);
        world_normals.push(ns);
    }

    // Normalize the union: global centroid to the origin, max radius to 1.
    let total: usize = world_points.iter().map(|p| p.len()).sum();
    let mut centroid = Vector3::zeros();
    for pts in &world_points {
        for p in pts {
            centroid += p;
        }
    }
    centroid /= total as f64;
    let mut scale: f64 = 0.0;
    for pts in &world_points {
        for p in pts {
            scale = scale.max((p - centroid).norm());
        }
    }
    let scale = scale.max(f64::MIN_POSITIVE);

    let mut posed = Vec::new();
    let mut fragments = Vec::new();
    let mut gt_transforms = Vec::new();
    for (id, (pts, ns)) in world_points.into_iter().zip(world_normals).enumerate() {
        let world: Vec<Vector3<f64>> = pts.iter().map(|p| (p - centroid) / scale).collect();
        let mut c = Vector3::zeros();
        for p in &world {
            c += p;
        }
        c /= world.len() as f64;
        let local: Vec<Vector3<f64>> = world.iter().map(|p| p - c).collect();
        let cloud = match ns {
            Some(normals) => PointCloud::with_normals(local, normals),
            None => estimate_normals(&PointCloud::new(local), normal_neighbors.min(pts.len()))?,
        };
        posed.push(PointCloud::new(world));
        let area = cloud.len() as f64; // proportional estimate; no density known
        fragments.push(Fragment {
            id,
            points: cloud,
            area,
        });
        gt_transforms.push(RigidTransform::new(Matrix3::identity(), c));
    }

    let (fracture_labels, adjacency) = label_structure(&posed, eps_f, eps_adj);
    let areas: Vec<f64> = fragments.iter().map(|f| f.area).collect();
    let anchor_id = AssemblySample::designate_anchor(&areas);
    let object_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "xyz-import".to_string());

    let sample = AssemblySample {
        object_id,
        fragments,
        gt_transforms,
        adjacency,
        fracture_labels,
        anchor_id,
        seed: 0,
        eps_fracture: eps_f,
        eps_adjacency: eps_adj,
    };
    sample.validate()?;
    Ok(sample)
}

fn read_xyz(path: &Path) -> Result<(Vec<Vector3<f64>>, Option<Vec<Vector3<f64>>>)> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut has_normals = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::SchemaViolation {
                path: display.clone(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
        match (cols.len(), has_normals) {
            (3, None | Some(false)) => {
                has_normals = Some(false);
                points.push(Vector3::new(cols[0], cols[1], cols[2]));
            }
            (6, None | Some(true)) => {
                has_normals = Some(true);
                points.push(Vector3::new(cols[0], cols[1], cols[2]));
                let n = Vector3::new(cols[3], cols[4], cols[5]);
                let norm = n.norm();
                normals.push(if norm > 0.0 { n / norm } else { Vector3::z() });
            }
            (cols_len, _) => {
                return Err(Error::SchemaViolation {
                    path: display,
                    reason: format!("line {}: expected 3 or 6 columns, got {cols_len}", lineno + 1),
                })
            }
        }
    }
    if points.is_empty() {
        return Err(Error::SchemaViolation {
            path: display,
            reason: "no points".to_string(),
        });
    }
    Ok((points, if has_normals == Some(true) { Some(normals) } else { None }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fracture_object_with, GenConfig, Shape};

    fn sample() -> AssemblySample {
        let config = GenConfig {
            points_per_object: 1500,
            ..GenConfig::default()
        };
        fracture_object_with(Shape::Cube, 3, 41, &config).unwrap()
    }

    #[test]
    fn round_trip_within_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), &s).unwrap();
        let r = read_sample(&dir.path().join(&s.object_id)).unwrap();
        assert_eq!(r.object_id, s.object_id);
        assert_eq!(r.k(), s.k());
        assert_eq!(r.adjacency, s.adjacency);
        assert_eq!(r.fracture_labels, s.fracture_labels);
        assert_eq!(r.anchor_id, s.anchor_id);
        for (fa, fb) in s.fragments.iter().zip(&r.fragments) {
            assert_eq!(fa.area, fb.area);
            for (p, q) in fa.points.points.iter().zip(&fb.points.points) {
                for a in 0..3 {
                    assert_eq!((p[a] as f32) as f64, q[a]);
                }
            }
        }
        for (ta, tb) in s.gt_transforms.iter().zip(&r.gt_transforms) {
            assert_eq!(ta.translation, tb.translation);
        }
    }

    #[test]
    fn truncated_file_names_the_section() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), &s).unwrap();
        let frag0 = dir.path().join(&s.object_id).join("frag_0.bin");
        let bytes = fs::read(&frag0).unwrap();
        fs::write(&frag0, &bytes[..4 + 12 * s.fragments[0].points.len() - 7]).unwrap();
        match read_sample(&dir.path().join(&s.object_id)) {
            Err(Error::Truncated { section, .. }) => assert_eq!(section, "points"),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_reversed_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), &s).unwrap();
        let manifest = dir.path().join(&s.object_id).join("manifest.json");
        let text = fs::read_to_string(&manifest).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let edges = v["adjacency_edges"].as_array_mut().unwrap();
        let first = edges[0].as_array().unwrap().clone();
        edges.push(serde_json::json!([first[1], first[0]]));
        fs::write(&manifest, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(
            read_sample(&dir.path().join(&s.object_id)),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), &s).unwrap();
        let manifest = dir.path().join(&s.object_id).join("manifest.json");
        let text = fs::read_to_string(&manifest).unwrap();
        fs::write(&manifest, text.replace("\"format_version\": \"1\"", "\"format_version\": \"9\"")).unwrap();
        assert!(matches!(
            read_sample(&dir.path().join(&s.object_id)),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn unknown_manifest_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), &s).unwrap();
        let manifest = dir.path().join(&s.object_id).join("manifest.json");
        let text = fs::read_to_string(&manifest).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["surprise"] = serde_json::json!(1);
        fs::write(&manifest, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(
            read_sample(&dir.path().join(&s.object_id)),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn xyz_import_derives_labels() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        // Write posed fragments as xyz without normals.
        for (i, cloud) in s.posed_fragments().iter().enumerate() {
            let mut text = String::new();
            for p in &cloud.points {
                text.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
            }
            fs::write(dir.path().join(format!("frag_{i}.xyz")), text).unwrap();
        }
        let imported = import_xyz_object(dir.path(), 0.01, 0.02, 16).unwrap();
        assert_eq!(imported.k(), s.k());
        assert_eq!(imported.adjacency, s.adjacency);
        assert!(imported.fragments.iter().all(|f| f.points.normals.is_some()));
    }
}
