use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use super::wire::{
    pfm_b64, pfm_from_b64, png_b64, png_from_b64, rel_from_wire, DepthRequestWire, DepthResponseWire, ErrorWire,
    ImageRequestWire, ImageResponseWire, DEPTH_PATH, IMAGE_PATH,
};
use super::{
    AnchorImage, CameraHint, DepthCompleter, DepthCompletionRequest, ImageCompleter, ImageCompletionRequest,
    OracleCompleter,
};
use crate::camera::{orbit_pose, CameraView, Intrinsics, Pose, RelativeTransform, DEFAULT_FOV_DEG};
use crate::grid::DepthMap;
use crate::raster::TriangleMesh;
use crate::warp::PartialView;
use crate::{CompletionError, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServerOptions {
    /// Orbit radius of the assumed frontal anchor when a request carries no
    /// `anchor_pose`.
    pub radius: f64,
    /// How often the accept loop polls the shutdown flag.
    pub poll: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            radius: crate::pipeline::DEFAULT_RADIUS,
            poll: Duration::from_millis(100),
        }
    }
}

/// Wire-protocol server backed by an [`OracleCompleter`]. Requests are
/// handled one at a time, in arrival order.
pub struct OracleServer {
    http: tiny_http::Server,
    oracle: OracleCompleter,
    options: ServerOptions,
    last_hint: Option<CameraHint>,
}

struct HttpError {
    status: u16,
    code: &'static str,
    message: String,
}

impl HttpError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: 400,
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl From<CompletionError> for HttpError {
    fn from(e: CompletionError) -> Self {
        match e {
            CompletionError::InvalidRequest(m) | CompletionError::MalformedResponse(m) => Self::bad_request(m),
            other => Self {
                status: 500,
                code: "completion_failed",
                message: other.to_string(),
            },
        }
    }
}

impl OracleServer {
    /// Binds `addr` (port 0 picks a free port).
    pub fn bind(addr: &str, mesh: TriangleMesh, options: ServerOptions) -> Result<Self> {
        let http = tiny_http::Server::http(addr)
            .map_err(|e| Error::invalid(format!("cannot listen on {addr}: {e}")))?;
        Ok(Self {
            http,
            oracle: OracleCompleter::new(mesh),
            options,
            last_hint: None,
        })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.http.server_addr().to_ip()
    }

    /// Serves until `shutdown` becomes true.
    pub fn serve(&mut self, shutdown: &AtomicBool) -> Result<()> {
        while !shutdown.load(Ordering::SeqCst) {
            match self.http.recv_timeout(self.options.poll) {
                Ok(Some(req)) => self.handle(req),
                Ok(None) => {}
                Err(e) => return Err(Error::io("<http>", e)),
            }
        }
        Ok(())
    }

    fn handle(&mut self, mut req: tiny_http::Request) {
        let method = req.method().clone();
        let path = req.url().split('?').next().unwrap_or("").to_string();
        let mut body = String::new();
        let read = req.as_reader().read_to_string(&mut body);
        let outcome = if method != tiny_http::Method::Post {
            Err(HttpError {
                status: 405,
                code: "method_not_allowed",
                message: format!("{method} not supported"),
            })
        } else if read.is_err() {
            Err(HttpError::bad_request("request body is not UTF-8"))
        } else {
            match path.as_str() {
                IMAGE_PATH => self.image(&body),
                DEPTH_PATH => self.depth(&body),
                _ => Err(HttpError {
                    status: 404,
                    code: "not_found",
                    message: format!("no route {path}"),
                }),
            }
        };
        let (status, text) = match outcome {
            Ok(t) => (200, t),
            Err(e) => {
                log::warn!("{method} {path}: {} {}", e.status, e.message);
                let body = ErrorWire {
                    code: e.code.to_string(),
                    message: e.message,
                };
                (e.status, serde_json::to_string(&body).unwrap_or_default())
            }
        };
        let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
        let resp = tiny_http::Response::from_string(text).with_status_code(status).with_header(header);
        if let Err(e) = req.respond(resp) {
            log::warn!("failed to send response: {e}");
        }
    }

    fn default_anchor(&self) -> std::result::Result<Pose, HttpError> {
        orbit_pose(0.0, 0.0, self.options.radius).map_err(|e| HttpError::bad_request(e.to_string()))
    }

    fn image(&mut self, body: &str) -> std::result::Result<String, HttpError> {
        let wire: ImageRequestWire =
            serde_json::from_str(body).map_err(|e| HttpError::bad_request(format!("invalid JSON: {e}")))?;
        wire.intrinsics.validate().map_err(|e| HttpError::bad_request(e.to_string()))?;
        let anchor_pose = match &wire.anchor_pose {
            Some(p) => p.to_pose(),
            None => self.default_anchor()?,
        };
        let hint = CameraHint {
            anchor_pose,
            rel: rel_from_wire(&wire.r_rel, &wire.t_rel),
            intrinsics: wire.intrinsics,
        };
        let (anchor_color, anchor_mask) = png_from_b64(&wire.anchor_png_b64)?;
        let (partial_color, coverage) = png_from_b64(&wire.partial_png_b64)?;
        let dims = (wire.intrinsics.width, wire.intrinsics.height);
        if anchor_color.dims() != dims || partial_color.dims() != dims {
            return Err(HttpError::bad_request("image sizes do not match intrinsics"));
        }
        let anchor = AnchorImage {
            color: anchor_color,
            mask: anchor_mask,
            view: CameraView::from_pose(wire.intrinsics, anchor_pose, 0),
        };
        let partial = PartialView {
            color: partial_color,
            depth: coverage.map(|&c| if c { 1.0 } else { 0.0 }),
            coverage,
            view: hint.target_view(),
        };
        let req = ImageCompletionRequest {
            anchor: &anchor,
            partial: &partial,
            rel: hint.rel,
        };
        let out = self.oracle.complete_image(&req)?;
        self.last_hint = Some(hint);
        let resp = ImageResponseWire {
            image_png_b64: png_b64(&out.color, &out.foreground)?,
            tolerance: out.tolerance,
        };
        Ok(serde_json::to_string(&resp).expect("serializable"))
    }

    fn depth(&mut self, body: &str) -> std::result::Result<String, HttpError> {
        let wire: DepthRequestWire =
            serde_json::from_str(body).map_err(|e| HttpError::bad_request(format!("invalid JSON: {e}")))?;
        let (image, foreground) = png_from_b64(&wire.image_png_b64)?;
        let partial_depth: DepthMap = pfm_from_b64(&wire.partial_depth_pfm_b64)?;
        let (_, coverage) = png_from_b64(&wire.coverage_png_b64)?;
        let (w, h) = image.dims();
        let hint = match (&wire.r_rel, &wire.t_rel) {
            (Some(r), Some(t)) => {
                let intrinsics = match wire.intrinsics {
                    Some(i) => i,
                    None => Intrinsics::from_fov(DEFAULT_FOV_DEG, w, h).map_err(|e| HttpError::bad_request(e.to_string()))?,
                };
                let anchor_pose = match &wire.anchor_pose {
                    Some(p) => p.to_pose(),
                    None => self.default_anchor()?,
                };
                CameraHint {
                    anchor_pose,
                    rel: rel_from_wire(r, t),
                    intrinsics,
                }
            }
            (None, None) => match self.last_hint {
                Some(h) => h,
                None => CameraHint {
                    anchor_pose: self.default_anchor()?,
                    rel: RelativeTransform::identity(),
                    intrinsics: Intrinsics::from_fov(DEFAULT_FOV_DEG, w, h)
                        .map_err(|e| HttpError::bad_request(e.to_string()))?,
                },
            },
            _ => return Err(HttpError::bad_request("r_rel and t_rel must be sent together")),
        };
        hint.intrinsics.validate().map_err(|e| HttpError::bad_request(e.to_string()))?;
        let req = DepthCompletionRequest {
            image: &image,
            foreground: &foreground,
            partial_depth: &partial_depth,
            coverage: &coverage,
            camera: Some(hint),
        };
        let depth = self.oracle.complete_depth(&req)?;
        let resp = DepthResponseWire {
            depth_pfm_b64: pfm_b64(&depth),
        };
        Ok(serde_json::to_string(&resp).expect("serializable"))
    }
}
