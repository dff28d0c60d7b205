//! COLMAP text-format scene ingestion.
//!
//! A scene directory holds `cameras.txt`, `images.txt`, `points3D.txt` and an
//! `images/` subdirectory. An optional `split.txt` lists the train and test
//! views (`train 1 4 7` / `test 0 2 3`, indices into the name-sorted views);
//! without it the hold-out-every-eighth split is used.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kiddo::{KdTree, SquaredEuclidean};

use crate::error::{io_err, Error, Result};
use crate::eval::make_llff_split;
use crate::io::images::{read_png, write_png};
use crate::scene::{logit, Camera, Gaussian3D, GaussianCloud, Quat, Scene, Vec3, MIN_SCALE};

pub const INITIAL_OPACITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraRecord {
    pub id: u32,
    pub model: String,
    pub width: usize,
    pub height: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: u32,
    /// World-to-camera rotation `(w, x, y, z)`.
    pub quaternion: Quat,
    pub translation: Vec3,
    pub camera_id: u32,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub id: u64,
    pub position: Vec3,
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SfMBundle {
    pub cameras: BTreeMap<u32, CameraRecord>,
    pub images: Vec<ImageRecord>,
    pub points: Vec<PointRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    pub near: f64,
    pub far: f64,
    /// Training views for the default split when no `split.txt` exists.
    pub train_views: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            near: crate::scene::DEFAULT_NEAR,
            far: crate::scene::DEFAULT_FAR,
            train_views: 3,
        }
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(tokens: &[&str], i: usize, what: &str, path: &Path, line: usize) -> Result<T> {
    tokens
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} `{}`", tokens[i])))
}

pub fn parse_cameras(text: &str, path: &Path) -> Result<BTreeMap<u32, CameraRecord>> {
    let mut out = BTreeMap::new();
    for (line, l) in content_lines(text) {
        if l.is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        let id = field(&t, 0, "camera id", path, line)?;
        let model = t.get(1).ok_or_else(|| parse_err(path, line, "missing model"))?.to_string();
        let width = field(&t, 2, "width", path, line)?;
        let height = field(&t, 3, "height", path, line)?;
        let params = (4..t.len())
            .map(|i| field(&t, i, "parameter", path, line))
            .collect::<Result<Vec<f64>>>()?;
        let needed = match model.as_str() {
            "PINHOLE" => 4,
            "SIMPLE_PINHOLE" => 3,
            other => return Err(parse_err(path, line, format!("unsupported camera model {other}"))),
        };
        if params.len() != needed {
            return Err(parse_err(
                path,
                line,
                format!("{model} needs {needed} parameters, found {}", params.len()),
            ));
        }
        out.insert(
            id,
            CameraRecord {
                id,
                model,
                width,
                height,
                params,
            },
        );
    }
    Ok(out)
}

pub fn parse_images(text: &str, path: &Path) -> Result<Vec<ImageRecord>> {
    // two lines per image; the second (2-D observations) may be empty
    let lines: Vec<(usize, &str)> = content_lines(text).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (line, l) = lines[i];
        if l.is_empty() {
            i += 1;
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 10 {
            return Err(parse_err(path, line, format!("expected 10 fields, found {}", t.len())));
        }
        let q = Quat::new(
            field(&t, 1, "QW", path, line)?,
            field(&t, 2, "QX", path, line)?,
            field(&t, 3, "QY", path, line)?,
            field(&t, 4, "QZ", path, line)?,
        );
        let tr = Vec3::new(
            field(&t, 5, "TX", path, line)?,
            field(&t, 6, "TY", path, line)?,
            field(&t, 7, "TZ", path, line)?,
        );
        out.push(ImageRecord {
            id: field(&t, 0, "image id", path, line)?,
            quaternion: q,
            translation: tr,
            camera_id: field(&t, 8, "camera id", path, line)?,
            name: t[9..].join(" "),
        });
        i += 2;
    }
    Ok(out)
}

pub fn parse_points(text: &str, path: &Path) -> Result<Vec<PointRecord>> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        if l.is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        let position = Vec3::new(
            field(&t, 1, "X", path, line)?,
            field(&t, 2, "Y", path, line)?,
            field(&t, 3, "Z", path, line)?,
        );
        if !position.iter().all(|v| v.is_finite()) {
            return Err(parse_err(path, line, "point position is not finite"));
        }
        out.push(PointRecord {
            id: field(&t, 0, "point id", path, line)?,
            position,
            rgb: [
                field(&t, 4, "R", path, line)?,
                field(&t, 5, "G", path, line)?,
                field(&t, 6, "B", path, line)?,
            ],
        });
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_bundle(dir: &Path) -> Result<SfMBundle> {
    let cam_path = dir.join("cameras.txt");
    let img_path = dir.join("images.txt");
    let pts_path = dir.join("points3D.txt");
    let bundle = SfMBundle {
        cameras: parse_cameras(&read_text(&cam_path)?, &cam_path)?,
        images: parse_images(&read_text(&img_path)?, &img_path)?,
        points: parse_points(&read_text(&pts_path)?, &pts_path)?,
    };
    for img in &bundle.images {
        if !bundle.cameras.contains_key(&img.camera_id) {
            return Err(Error::Format {
                what: "images.txt",
                message: format!("image {} references undeclared camera {}", img.name, img.camera_id),
            });
        }
    }
    Ok(bundle)
}

pub fn camera_from_records(cam: &CameraRecord, img: &ImageRecord, options: &LoadOptions) -> Result<Camera> {
    let (fx, fy, cx, cy) = match cam.model.as_str() {
        "PINHOLE" => (cam.params[0], cam.params[1], cam.params[2], cam.params[3]),
        "SIMPLE_PINHOLE" => (cam.params[0], cam.params[0], cam.params[1], cam.params[2]),
        other => {
            return Err(Error::Format {
                what: "cameras.txt",
                message: format!("unsupported camera model {other}"),
            })
        }
    };
    let mut camera = Camera::from_pose(fx, fy, cx, cy, cam.width, cam.height, img.quaternion, img.translation)?;
    camera.near = options.near;
    camera.far = options.far;
    Ok(camera)
}

/// One Gaussian per point: isotropic scale from the mean distance to the three
/// nearest neighbours, identity rotation, opacity 0.1, point color.
pub fn initial_cloud(points: &[PointRecord]) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::InvalidInput("SfM point set is empty".into()));
    }
    let mut tree: KdTree<f64, 3> = KdTree::new();
    for (i, p) in points.iter().enumerate() {
        tree.add(&[p.position.x, p.position.y, p.position.z], i as u64);
    }
    let k = 3.min(points.len() - 1);
    let gaussians = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mean = if k == 0 {
                // a lone point has no neighbours; fall back to unit scale
                1.0
            } else {
                let q = [p.position.x, p.position.y, p.position.z];
                let mut dists: Vec<f64> = tree
                    .nearest_n::<SquaredEuclidean>(&q, k + 1)
                    .into_iter()
                    .filter(|n| n.item != i as u64)
                    .map(|n| n.distance.sqrt())
                    .collect();
                dists.truncate(k);
                dists.iter().sum::<f64>() / dists.len() as f64
            };
            Gaussian3D {
                position: p.position,
                log_scale: Vec3::repeat(mean.max(MIN_SCALE).ln()),
                rotation: Quat::new(1.0, 0.0, 0.0, 0.0),
                opacity_logit: logit(INITIAL_OPACITY),
                color: Vec3::new(p.rgb[0] as f64, p.rgb[1] as f64, p.rgb[2] as f64) / 255.0,
            }
        })
        .collect();
    Ok(GaussianCloud::new(gaussians))
}

fn parse_split(text: &str, path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let (mut train, mut test) = (None, None);
    for (line, l) in content_lines(text) {
        if l.is_empty() {
            continue;
        }
        let mut t = l.split_whitespace();
        let key = t.next().unwrap();
        let values = t
            .map(|v| v.parse().map_err(|_| parse_err(path, line, format!("invalid index `{v}`"))))
            .collect::<Result<Vec<usize>>>()?;
        match key {
            "train" => train = Some(values),
            "test" => test = Some(values),
            other => return Err(parse_err(path, line, format!("unknown split key `{other}`"))),
        }
    }
    Ok((train.unwrap_or_default(), test.unwrap_or_default()))
}

/// Loads cameras, images and the initial cloud. Views are sorted by image name.
pub fn load_colmap_scene(dir: &Path, options: &LoadOptions) -> Result<(Scene, GaussianCloud)> {
    let mut bundle = read_bundle(dir)?;
    bundle.images.sort_by(|a, b| a.name.cmp(&b.name));
    let mut scene = Scene::default();
    for img in &bundle.images {
        let cam = &bundle.cameras[&img.camera_id];
        scene.cameras.push(camera_from_records(cam, img, options)?);
        scene.images.push(read_png(&dir.join("images").join(&img.name))?);
        scene.names.push(img.name.clone());
        scene.depth_priors.push(None);
    }
    let split_path = dir.join("split.txt");
    let (train, test) = if split_path.exists() {
        parse_split(&read_text(&split_path)?, &split_path)?
    } else {
        make_llff_split(scene.view_count(), options.train_views)?
    };
    scene.train = train;
    scene.test = test;
    let report = crate::scene::validate_scene(&scene);
    if let Some(v) = report.first() {
        return Err(Error::InvalidInput(format!(
            "scene {}: {} (view {:?}): {}",
            dir.display(),
            v.field,
            v.view,
            v.message
        )));
    }
    let cloud = initial_cloud(&bundle.points)?;
    Ok((scene, cloud))
}

/// Records describing `scene`, one PINHOLE camera per view.
pub fn bundle_from_scene(scene: &Scene, points: Vec<PointRecord>) -> SfMBundle {
    let mut bundle = SfMBundle {
        points,
        ..Default::default()
    };
    for (i, cam) in scene.cameras.iter().enumerate() {
        let id = i as u32 + 1;
        bundle.cameras.insert(
            id,
            CameraRecord {
                id,
                model: "PINHOLE".into(),
                width: cam.width,
                height: cam.height,
                params: vec![cam.fx, cam.fy, cam.cx, cam.cy],
            },
        );
        bundle.images.push(ImageRecord {
            id,
            quaternion: cam.quaternion(),
            translation: cam.translation,
            camera_id: id,
            name: scene.names[i].clone(),
        });
    }
    bundle
}

/// Point records carrying the centers and colors of a cloud.
pub fn points_from_cloud(cloud: &GaussianCloud) -> Vec<PointRecord> {
    cloud
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| PointRecord {
            id: i as u64 + 1,
            position: g.position,
            rgb: [0, 1, 2].map(|k| (g.color[k].clamp(0.0, 1.0) * 255.0).round() as u8),
        })
        .collect()
}

pub fn write_bundle(dir: &Path, bundle: &SfMBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut cams = String::from("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n");
    for c in bundle.cameras.values() {
        write!(cams, "{} {} {} {}", c.id, c.model, c.width, c.height).unwrap();
        for p in &c.params {
            write!(cams, " {p}").unwrap();
        }
        cams.push('\n');
    }
    let mut imgs = String::from("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for im in &bundle.images {
        let (q, t) = (&im.quaternion, &im.translation);
        writeln!(
            imgs,
            "{} {} {} {} {} {} {} {} {} {}\n",
            im.id, q[0], q[1], q[2], q[3], t.x, t.y, t.z, im.camera_id, im.name
        )
        .unwrap();
    }
    let mut pts = String::from("# POINT3D_ID X Y Z R G B ERROR TRACK[]\n");
    for p in &bundle.points {
        writeln!(
            pts,
            "{} {} {} {} {} {} {} 0",
            p.id, p.position.x, p.position.y, p.position.z, p.rgb[0], p.rgb[1], p.rgb[2]
        )
        .unwrap();
    }
    for (name, text) in [("cameras.txt", cams), ("images.txt", imgs), ("points3D.txt", pts)] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Writes images, the split and the SfM text files so that
/// [`load_colmap_scene`] reproduces `scene`.
pub fn save_colmap_scene(dir: &Path, scene: &Scene, bundle: &SfMBundle) -> Result<()> {
    write_bundle(dir, bundle)?;
    let images_dir: PathBuf = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    for (name, image) in scene.names.iter().zip(&scene.images) {
        write_png(&images_dir.join(name), image)?;
    }
    let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
    let split = format!("train {}\ntest {}\n", join(&scene.train), join(&scene.test));
    let path = dir.join("split.txt");
    std::fs::write(&path, split).map_err(io_err(&path))
}
