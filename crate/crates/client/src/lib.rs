//! Async client for the splatgym HTTP service.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use futures::StreamExt;
use serde::de::DeserializeOwned;
use serde::Serialize;

use splatgym_core::api::{
    BenchLine, BenchRequest, ErrorBody, FrameResponse, Health, RenderRequest, RenderResponse, RolloutRequest,
    SessionInfo, SessionRequest, StepRequest, StepResponse, StreamEnd, ValidateRequest, ValidateResponse,
};
use splatgym_core::bench::BenchReport;
use splatgym_core::rollout::RolloutSummary;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{} ({status})", body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("{0}")]
    Sink(std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// A rendered view with decoded PNG bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub rgb_png: Vec<u8>,
    pub depth_png: Vec<u8>,
    pub depth_max: f32,
    pub render_ms: f64,
}

/// Latest frames of a session, decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub height: usize,
    pub width: usize,
    /// `N x H x W x 3`.
    pub rgb: Vec<u8>,
    /// `N x H x W` meters.
    pub depth: Vec<f32>,
    pub frame_steps: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

fn b64(s: &str) -> Result<Vec<u8>> {
    B64.decode(s)
        .map_err(|e| ClientError::Decode(format!("bad base64: {e}")))
}

impl Client {
    /// `base` like `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn check(resp: reqwest::Response) -> Result<reqwest::Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            kind: splatgym_core::api::ErrorKind::Internal,
            message: text,
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.http.post(self.url(path)).json(body).send().await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let resp = self.http.get(self.url(path)).send().await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn validate(&self, req: &ValidateRequest) -> Result<ValidateResponse> {
        self.post("/validate", req).await
    }

    pub async fn render(&self, req: &RenderRequest) -> Result<Rendered> {
        let r: RenderResponse = self.post("/render", req).await?;
        Ok(Rendered {
            rgb_png: b64(&r.rgb_png)?,
            depth_png: b64(&r.depth_png)?,
            scene_id: r.scene_id,
            width: r.width,
            height: r.height,
            depth_max: r.depth_max,
            render_ms: r.render_ms,
        })
    }

    /// Streams NDJSON lines of `path` to `on_line`, without the newline.
    async fn stream_lines<B: Serialize>(
        &self,
        path: &str,
        body: &B,
        mut on_line: impl FnMut(&str) -> Result<()>,
    ) -> Result<()> {
        let resp = self.http.post(self.url(path)).json(body).send().await?;
        let mut chunks = Self::check(resp).await?.bytes_stream();
        let mut buf = Vec::new();
        while let Some(chunk) = chunks.next().await {
            buf.extend_from_slice(&chunk?);
            while let Some(i) = buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buf.drain(..=i).collect();
                let line = std::str::from_utf8(&line[..i]).map_err(|e| ClientError::Decode(e.to_string()))?;
                on_line(line)?;
            }
        }
        if !buf.is_empty() {
            return Err(ClientError::Decode("stream ended mid-line".into()));
        }
        Ok(())
    }

    /// Runs a rollout, handing each metrics line (one JSON object per
    /// environment step) to `on_metrics`.
    pub async fn rollout(
        &self,
        req: &RolloutRequest,
        mut on_metrics: impl FnMut(&str) -> std::io::Result<()>,
    ) -> Result<RolloutSummary> {
        let mut end = None;
        self.stream_lines("/rollout", req, |line| {
            if line.starts_with(r#"{"summary":"#) || line.starts_with(r#"{"error":"#) {
                end = Some(serde_json::from_str::<StreamEnd>(line).map_err(|e| ClientError::Decode(e.to_string()))?);
                return Ok(());
            }
            on_metrics(line).map_err(ClientError::Sink)
        })
        .await?;
        match end {
            Some(StreamEnd::Summary(s)) => Ok(s),
            Some(StreamEnd::Error(body)) => Err(ClientError::Api { status: 200, body }),
            None => Err(ClientError::Decode("rollout stream ended without a summary".into())),
        }
    }

    /// Runs a bench sweep, handing each report to `on_report` as it lands.
    pub async fn bench(
        &self,
        req: &BenchRequest,
        mut on_report: impl FnMut(&BenchReport) -> std::io::Result<()>,
    ) -> Result<Vec<BenchReport>> {
        let mut out = Vec::new();
        let mut failure = None;
        self.stream_lines("/bench", req, |line| {
            match serde_json::from_str(line).map_err(|e| ClientError::Decode(e.to_string()))? {
                BenchLine::Report(r) => {
                    on_report(&r).map_err(ClientError::Sink)?;
                    out.push(r);
                }
                BenchLine::Error(body) => failure = Some(body),
            }
            Ok(())
        })
        .await?;
        match failure {
            Some(body) => Err(ClientError::Api { status: 200, body }),
            None => Ok(out),
        }
    }

    pub async fn create_session(&self, req: &SessionRequest) -> Result<SessionInfo> {
        self.post("/sessions", req).await
    }

    pub async fn step(&self, id: &str, actions: &[f32]) -> Result<StepResponse> {
        let req = StepRequest {
            actions: actions.to_vec(),
        };
        self.post(&format!("/sessions/{id}/step"), &req).await
    }

    pub async fn reset(&self, id: &str) -> Result<StepResponse> {
        let resp = self
            .http
            .post(self.url(&format!("/sessions/{id}/reset")))
            .send()
            .await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    pub async fn frames(&self, id: &str) -> Result<Frames> {
        let f: FrameResponse = self.get(&format!("/sessions/{id}/frame")).await?;
        let depth = b64(&f.depth)?;
        if depth.len() % 4 != 0 {
            return Err(ClientError::Decode("depth buffer is not a whole number of f32".into()));
        }
        Ok(Frames {
            height: f.height,
            width: f.width,
            rgb: b64(&f.rgb)?,
            depth: depth
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            frame_steps: f.frame_steps,
        })
    }

    pub async fn close_session(&self, id: &str) -> Result<()> {
        let resp = self.http.delete(self.url(&format!("/sessions/{id}"))).send().await?;
        Self::check(resp).await?;
        Ok(())
    }
}
