use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{require_positive, FeatureExtractor, PerceptionError, Segmenter, ViewInput, FEATURE_DOWNSAMPLE};
use crate::epipolar::FeatureMap;
use crate::scene::{mask_from_png_bytes, Click, Mask, Polarity};

const TIMEOUT: Duration = Duration::from_secs(60);

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(TIMEOUT)
        .build()
        .expect("HTTP client without TLS builds")
}

fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &B,
) -> Result<R, PerceptionError> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| PerceptionError::RemoteUnavailable(format!("{url}: {e}")))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(PerceptionError::RemoteUnavailable(format!("{url}: HTTP {status}")));
    }
    resp.json()
        .map_err(|e| PerceptionError::RemoteProtocol(format!("{url}: {e}")))
}

#[derive(Serialize)]
struct Point {
    x: f64,
    y: f64,
    label: u8,
}

#[derive(Serialize)]
struct SegmentRequest {
    image_png: String,
    points: Vec<Point>,
}

#[derive(Deserialize)]
struct SegmentResponse {
    mask_png: String,
}

/// Client for a `POST /segment` model server.
#[derive(Debug, Clone)]
pub struct RemoteSegmenter {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteSegmenter {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            client: client(),
        }
    }
}

impl Segmenter for RemoteSegmenter {
    fn segment(&self, view: &ViewInput<'_>, clicks: &[Click]) -> Result<Mask, PerceptionError> {
        require_positive(clicks)?;
        let body = SegmentRequest {
            image_png: B64.encode(view.image.to_png_bytes()),
            points: clicks
                .iter()
                .map(|c| Point {
                    x: c.x,
                    y: c.y,
                    label: u8::from(c.polarity == Polarity::Positive),
                })
                .collect(),
        };
        let resp: SegmentResponse = post(&self.client, &format!("{}/segment", self.endpoint), &body)?;
        let bytes = B64
            .decode(resp.mask_png.as_bytes())
            .map_err(|e| PerceptionError::RemoteProtocol(format!("mask_png: {e}")))?;
        let mask = mask_from_png_bytes(view.camera.id, &bytes)
            .map_err(|e| PerceptionError::RemoteProtocol(format!("mask_png: {e}")))?;
        if !mask.matches_camera(view.camera) {
            return Err(PerceptionError::DimensionMismatch(format!(
                "mask is {}x{}, view is {}x{}",
                mask.width, mask.height, view.camera.width, view.camera.height
            )));
        }
        Ok(mask)
    }
}

#[derive(Serialize)]
struct FeatureRequest {
    image_png: String,
    downsample: u32,
}

#[derive(Deserialize)]
struct FeatureResponse {
    h: u32,
    w: u32,
    d: usize,
    data: Vec<f32>,
}

/// Client for a `POST /features` model server.
#[derive(Debug, Clone)]
pub struct RemoteFeatures {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteFeatures {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            client: client(),
        }
    }
}

/// Stride implied by a grid of `cells` over `pixels`, if the grid tiles the image.
fn grid_stride(pixels: u32, cells: u32) -> Option<u32> {
    if cells == 0 || cells > pixels {
        return None;
    }
    let stride = pixels / cells;
    (pixels - stride * cells < stride).then_some(stride)
}

impl FeatureExtractor for RemoteFeatures {
    fn extract(&self, view: &ViewInput<'_>) -> Result<FeatureMap, PerceptionError> {
        let body = FeatureRequest {
            image_png: B64.encode(view.image.to_png_bytes()),
            downsample: FEATURE_DOWNSAMPLE,
        };
        let resp: FeatureResponse = post(&self.client, &format!("{}/features", self.endpoint), &body)?;
        let expected = resp.h as usize * resp.w as usize * resp.d;
        if resp.d == 0 || resp.data.len() != expected {
            return Err(PerceptionError::DimensionMismatch(format!(
                "grid {}x{}x{} needs {expected} values, got {}",
                resp.h,
                resp.w,
                resp.d,
                resp.data.len()
            )));
        }
        let sx = grid_stride(view.camera.width, resp.w);
        let sy = grid_stride(view.camera.height, resp.h);
        let stride = match (sx, sy) {
            (Some(a), Some(b)) if a == b => a,
            _ => {
                return Err(PerceptionError::DimensionMismatch(format!(
                    "{}x{} grid does not tile a {}x{} image with a square stride",
                    resp.w, resp.h, view.camera.width, view.camera.height
                )))
            }
        };
        Ok(FeatureMap {
            view_id: view.camera.id,
            width: resp.w,
            height: resp.h,
            dim: resp.d,
            stride,
            data: resp.data,
        })
    }
}
