use std::time::Duration;

use super::wire::{
    mask_b64, pfm_b64, pfm_from_b64, png_b64, png_from_b64, rel_to_wire, DepthRequestWire, DepthResponseWire,
    ErrorWire, ImageRequestWire, ImageResponseWire, PoseWire, DEPTH_PATH, IMAGE_PATH,
};
use super::{
    check_known_region, CompletedImage, DepthCompleter, DepthCompletionRequest, ImageCompleter, ImageCompletionRequest,
    MAX_REMOTE_TOLERANCE,
};
use crate::grid::DepthMap;
use crate::CompletionError;

/// Environment variable naming the default backend endpoint.
pub const ENV_BACKEND_URL: &str = "VIEWLOOM_BACKEND_URL";

const BODY_LIMIT: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8765`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub retry_delay: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            retries: 2,
            retry_delay: Duration::from_millis(200),
        }
    }

    /// Endpoint from `VIEWLOOM_BACKEND_URL`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var(ENV_BACKEND_URL).ok().filter(|s| !s.is_empty()).map(Self::new)
    }
}

/// Wire-protocol client. One request in flight per handle.
pub struct RemoteCompleter {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteCompleter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteCompleter").field("config", &self.config).finish()
    }
}

pub fn remote_image_completer(endpoint: impl Into<String>) -> RemoteCompleter {
    RemoteCompleter::new(RemoteConfig::new(endpoint))
}

pub fn remote_depth_completer(endpoint: impl Into<String>) -> RemoteCompleter {
    RemoteCompleter::new(RemoteConfig::new(endpoint))
}

impl RemoteCompleter {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post<Req: serde::Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, CompletionError> {
        let url = format!("{}{}", self.config.endpoint, path);
        let payload = serde_json::to_string(body).map_err(|e| CompletionError::InvalidRequest(e.to_string()))?;
        let mut attempt = 0;
        let (status, text) = loop {
            match self.send_once(&url, &payload) {
                Ok(r) => break r,
                Err(SendError::Timeout) => return Err(CompletionError::Timeout),
                Err(SendError::Fatal(e)) => return Err(e),
                Err(SendError::Transport(msg)) => {
                    if attempt >= self.config.retries {
                        return Err(CompletionError::BackendUnavailable(format!(
                            "{url}: {msg} (after {} attempts)",
                            attempt + 1
                        )));
                    }
                    attempt += 1;
                    log::warn!("request to {url} failed ({msg}); retry {attempt}");
                    std::thread::sleep(self.config.retry_delay);
                }
            }
        };
        if !(200..300).contains(&status) {
            let (code, message) = match serde_json::from_str::<ErrorWire>(&text) {
                Ok(e) => (e.code, e.message),
                Err(_) => ("unknown".to_string(), text.chars().take(200).collect()),
            };
            return Err(CompletionError::Backend { status, code, message });
        }
        serde_json::from_str(&text).map_err(|e| CompletionError::MalformedResponse(format!("response body: {e}")))
    }

    fn send_once(&self, url: &str, payload: &str) -> Result<(u16, String), SendError> {
        let result = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(payload);
        let mut resp = match result {
            Ok(r) => r,
            Err(e) => return Err(classify(e)),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_string()
            .map_err(classify)?;
        Ok((status, text))
    }
}

enum SendError {
    Timeout,
    Transport(String),
    Fatal(CompletionError),
}

fn classify(e: ureq::Error) -> SendError {
    match e {
        ureq::Error::Timeout(_) => SendError::Timeout,
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => SendError::Timeout,
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::Protocol(_) => {
            SendError::Transport(e.to_string())
        }
        ureq::Error::BadUri(u) => SendError::Fatal(CompletionError::InvalidRequest(format!("bad endpoint URI {u}"))),
        other => SendError::Fatal(CompletionError::MalformedResponse(other.to_string())),
    }
}

impl ImageCompleter for RemoteCompleter {
    fn complete_image(&mut self, req: &ImageCompletionRequest<'_>) -> Result<CompletedImage, CompletionError> {
        req.validate()?;
        let (r_rel, t_rel) = rel_to_wire(&req.rel);
        let body = ImageRequestWire {
            anchor_png_b64: png_b64(&req.anchor.color, &req.anchor.mask)?,
            partial_png_b64: png_b64(&req.partial.color, &req.partial.coverage)?,
            r_rel,
            t_rel,
            intrinsics: req.intrinsics(),
            anchor_pose: Some(PoseWire::from_pose(&req.anchor.view.pose)),
        };
        let resp: ImageResponseWire = self.post(IMAGE_PATH, &body)?;
        if !(resp.tolerance.is_finite() && resp.tolerance >= 0.0) {
            return Err(CompletionError::MalformedResponse(format!("tolerance {}", resp.tolerance)));
        }
        if resp.tolerance > MAX_REMOTE_TOLERANCE {
            return Err(CompletionError::ContractViolation {
                max_error: resp.tolerance,
                tolerance: MAX_REMOTE_TOLERANCE,
            });
        }
        let (color, foreground) = png_from_b64(&resp.image_png_b64)?;
        let completed = CompletedImage {
            color,
            foreground,
            tolerance: resp.tolerance,
        };
        check_known_region(req.partial, &completed)?.into_result()?;
        Ok(completed)
    }
}

impl DepthCompleter for RemoteCompleter {
    fn complete_depth(&mut self, req: &DepthCompletionRequest<'_>) -> Result<DepthMap, CompletionError> {
        req.validate()?;
        let mut body = DepthRequestWire {
            image_png_b64: png_b64(req.image, req.foreground)?,
            partial_depth_pfm_b64: pfm_b64(req.partial_depth),
            coverage_png_b64: mask_b64(req.coverage)?,
            r_rel: None,
            t_rel: None,
            intrinsics: None,
            anchor_pose: None,
        };
        if let Some(c) = &req.camera {
            let (r, t) = rel_to_wire(&c.rel);
            body.r_rel = Some(r);
            body.t_rel = Some(t);
            body.intrinsics = Some(c.intrinsics);
            body.anchor_pose = Some(PoseWire::from_pose(&c.anchor_pose));
        }
        let resp: DepthResponseWire = self.post(DEPTH_PATH, &body)?;
        let depth = pfm_from_b64(&resp.depth_pfm_b64)?;
        if depth.dims() != req.image.dims() {
            return Err(CompletionError::MalformedResponse(format!(
                "depth map is {:?}, expected {:?}",
                depth.dims(),
                req.image.dims()
            )));
        }
        Ok(depth)
    }
}
