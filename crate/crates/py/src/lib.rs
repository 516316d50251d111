//! Python bindings: phantom generation, network training and inference,
//! segmentation post-processing, and ICA quantification. Images cross the
//! boundary as row-major `bytes` plus explicit width/height; masks as
//! `bytes` of 0/1.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use octaquant::augment::AugmentPlan;
use octaquant::eval;
use octaquant::phantom::{generate_dataset, CohortTag, PhantomSpec};
use octaquant::quantify::{quantify_mask, Plexus, QuantifyConfig};
use octaquant::raster::{BinaryMask, GrayImage};
use octaquant::segment::{binarize, infer_tiled, otsu_threshold, remove_small_components, PostProcessConfig};
use octaquant::training::{train, LabeledSet, SourceTag, TrainConfig};
use octaquant::unet::{build, load_weights, save_weights, ModelWeights, UnetConfig};

fn to_py(e: octaquant::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn gray_from_bytes(data: &[u8], width: usize, height: usize) -> PyResult<GrayImage> {
    GrayImage::new(width, height, data.to_vec()).map_err(to_py)
}

fn mask_from_bytes(data: &[u8], width: usize, height: usize) -> PyResult<BinaryMask> {
    BinaryMask::new(width, height, data.iter().map(|&b| b != 0).collect()).map_err(to_py)
}

fn mask_to_bytes<'py>(py: Python<'py>, mask: &BinaryMask) -> Bound<'py, PyBytes> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| b as u8).collect();
    PyBytes::new_bound(py, &bytes)
}

/// Mini U-Net wrapper; holds the full parameter set.
#[pyclass]
struct Unet {
    weights: ModelWeights,
}

#[pymethods]
impl Unet {
    /// Fresh network with random initialization.
    #[new]
    #[pyo3(signature = (depth=4, base_channels=16, seed=0))]
    fn new(depth: usize, base_channels: usize, seed: u64) -> PyResult<Self> {
        let config = UnetConfig {
            depth,
            base_channels,
            ..UnetConfig::default()
        };
        Ok(Unet {
            weights: build(&config, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Unet {
            weights: load_weights(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_weights(&self.weights, path).map_err(to_py)
    }

    /// Vessel probability map as a list of floats (row-major).
    fn probabilities(&self, image: &[u8], width: usize, height: usize) -> PyResult<Vec<f32>> {
        let img = gray_from_bytes(image, width, height)?;
        let prob = infer_tiled(&self.weights, &img, height, width).map_err(to_py)?;
        Ok(prob.data().to_vec())
    }

    /// Binarized and cluster-filtered segmentation.
    #[pyo3(signature = (image, width, height, threshold=0.5, min_cluster_px=30))]
    fn segment<'py>(
        &self,
        py: Python<'py>,
        image: &[u8],
        width: usize,
        height: usize,
        threshold: f32,
        min_cluster_px: usize,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let img = gray_from_bytes(image, width, height)?;
        let prob = infer_tiled(&self.weights, &img, height, width).map_err(to_py)?;
        let mask = remove_small_components(
            &binarize(&prob, threshold),
            min_cluster_px,
            PostProcessConfig::default().connectivity,
        );
        Ok(mask_to_bytes(py, &mask))
    }

    /// Train on paired (image, mask) byte buffers; returns per-epoch
    /// (loss, dice) tuples and leaves the updated weights in place.
    #[pyo3(signature = (images, masks, width, height, epochs=120, learning_rate=1e-4, adam_epsilon=1e-5, batch_size=4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        images: Vec<Vec<u8>>,
        masks: Vec<Vec<u8>>,
        width: usize,
        height: usize,
        epochs: usize,
        learning_rate: f64,
        adam_epsilon: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<(f64, f64)>> {
        if images.len() != masks.len() {
            return Err(PyValueError::new_err("images and masks differ in length"));
        }
        let mut set = LabeledSet::new();
        for (img, msk) in images.iter().zip(&masks) {
            set.push(
                gray_from_bytes(img, width, height)?,
                mask_from_bytes(msk, width, height)?,
                SourceTag::Manual,
            )
            .map_err(to_py)?;
        }
        let config = TrainConfig {
            epochs,
            learning_rate,
            adam_epsilon,
            batch_size,
            seed,
            ..TrainConfig::initial()
        };
        let (trained, history) = train(&self.weights, &set, &config).map_err(to_py)?;
        self.weights = trained;
        Ok(history.epochs.iter().map(|e| (e.loss, e.dice)).collect())
    }
}

/// Synthetic phantom cohort; each item is a dict with `single`,
/// `averaged`, `mask` byte buffers plus dimensions and the cohort tag.
#[pyfunction]
#[pyo3(signature = (style, width, height, count=1, seed=0, snr=3.0, frames=8, density=None))]
#[allow(clippy::too_many_arguments)]
fn phantom_cohort<'py>(
    py: Python<'py>,
    style: &str,
    width: usize,
    height: usize,
    count: usize,
    seed: u64,
    snr: f64,
    frames: usize,
    density: Option<f64>,
) -> PyResult<Bound<'py, PyList>> {
    let plexus: Plexus = style.parse().map_err(to_py)?;
    let mut spec = PhantomSpec::new(plexus, height, width, seed);
    spec.speckle_snr = snr;
    spec.frames_to_average = frames;
    if let Some(d) = density {
        spec.vessel_density_target = d;
    }
    let items = generate_dataset(&spec, count, seed).map_err(to_py)?;
    let out = PyList::empty_bound(py);
    for item in &items {
        let d = PyDict::new_bound(py);
        d.set_item("width", width)?;
        d.set_item("height", height)?;
        d.set_item("single", PyBytes::new_bound(py, item.single.data()))?;
        d.set_item("averaged", PyBytes::new_bound(py, item.averaged.data()))?;
        d.set_item("mask", mask_to_bytes(py, &item.truth.vessels))?;
        d.set_item("control", item.tag == CohortTag::Control)?;
        out.append(d)?;
    }
    Ok(out)
}

/// Otsu's threshold over the 256-bin histogram.
#[pyfunction]
fn otsu_level(image: &[u8], width: usize, height: usize) -> PyResult<u8> {
    Ok(otsu_threshold(&gray_from_bytes(image, width, height)?))
}

/// Dice coefficient between two 0/1 masks.
#[pyfunction]
fn dice(a: &[u8], b: &[u8], width: usize, height: usize) -> PyResult<f64> {
    eval::dice_masks(&mask_from_bytes(a, width, height)?, &mask_from_bytes(b, width, height)?)
        .map_err(to_py)
}

/// 13-fold augmentation of one labeled pair; returns (image, mask) tuples.
#[pyfunction]
#[pyo3(signature = (image, mask, width, height, seed=0))]
fn augment_pair<'py>(
    py: Python<'py>,
    image: &[u8],
    mask: &[u8],
    width: usize,
    height: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyList>> {
    let plan = AugmentPlan {
        seed,
        ..AugmentPlan::default()
    };
    let pairs = octaquant::augment::expand(
        &gray_from_bytes(image, width, height)?,
        &mask_from_bytes(mask, width, height)?,
        &plan,
    )
    .map_err(to_py)?;
    let out = PyList::empty_bound(py);
    for (img, msk) in &pairs {
        out.append((PyBytes::new_bound(py, img.data()), mask_to_bytes(py, msk)))?;
    }
    Ok(out)
}

/// ICA quantification of a binary mask: per-ICA dicts plus FAZ info.
#[pyfunction]
#[pyo3(signature = (mask, width, height, px_per_mm=512.0/6.0, plexus="SCP"))]
fn quantify<'py>(
    py: Python<'py>,
    mask: &[u8],
    width: usize,
    height: usize,
    px_per_mm: f64,
    plexus: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let config = QuantifyConfig {
        px_per_mm,
        plexus: plexus.parse().map_err(to_py)?,
        ..QuantifyConfig::default()
    };
    let report = quantify_mask("py", &mask_from_bytes(mask, width, height)?, None, &config)
        .map_err(to_py)?;
    let regions = PyList::empty_bound(py);
    for r in &report.regions {
        let d = PyDict::new_bound(py);
        d.set_item("ica_id", r.label)?;
        d.set_item("region", r.etdrs_region.name())?;
        d.set_item("area_px", r.pixel_count)?;
        d.set_item("mip_px", r.mip_value)?;
        d.set_item("is_faz", r.label == report.faz_label)?;
        regions.append(d)?;
    }
    let out = PyDict::new_bound(py);
    out.set_item("regions", regions)?;
    out.set_item("faz_label", report.faz_label)?;
    let densities = PyDict::new_bound(py);
    for (region, v) in &report.densities {
        densities.set_item(region.name(), v)?;
    }
    out.set_item("vessel_density", densities)?;
    Ok(out)
}

#[pymodule]
fn octaquant_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Unet>()?;
    m.add_function(wrap_pyfunction!(phantom_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(otsu_level, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(augment_pair, m)?)?;
    m.add_function(wrap_pyfunction!(quantify, m)?)?;
    Ok(())
}
