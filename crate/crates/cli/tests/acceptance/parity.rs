//! The same inputs through the `cfu` binary and through the HTTP service
//! must render the same bytes.

use std::path::Path;
use std::process::Command;

use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use cfu_core::store::Store;
use cfu_server::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::json;
use tower::ServiceExt;

use crate::{ensure, Outcome};

const IMAGES: u64 = 3;

fn cfu(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cfu"))
        .args(args)
        .env_remove("CFU_CONFIG")
        .env_remove("CFU_SCORE_THRESHOLD")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "cfu {}: {}\n{}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out.stdout)
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> Result<Vec<u8>, String> {
    let req = Request::builder().method(method).uri(uri).body(body.into()).map_err(|e| e.to_string())?;
    let res = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = res.status();
    let bytes = res.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes().to_vec();
    ensure!(status.is_success(), "{uri}: {status} {}", String::from_utf8_lossy(&bytes));
    Ok(bytes)
}

fn same(what: &str, cli: &[u8], api: &[u8]) -> Result<(), String> {
    ensure!(
        cli == api,
        "{what} differs\n--- cli\n{}\n--- api\n{}",
        String::from_utf8_lossy(cli),
        String::from_utf8_lossy(api)
    );
    Ok(())
}

pub fn cli_matches_api() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let case = tmp.path().join("case");
    let filtered = tmp.path().join("filtered");
    let images = IMAGES.to_string();
    cfu(&["--seed", "31", "synth", "--out", path(&case), "--images", &images])?;

    let cli_summary_json = cfu(&["--format", "json", "postprocess", "--in", path(&case), "--out", path(&filtered)])?;
    let cli_summary_text = cfu(&["postprocess", "--in", path(&case)])?;
    let cli_eval_json = cfu(&["--format", "json", "evaluate", "--pred", path(&filtered)])?;
    let cli_eval_text = cfu(&["evaluate", "--pred", path(&filtered)])?;
    let experiment = tmp.path().join("experiment.json");
    let triplicates = json!([{ "image_ids": (1..=IMAGES).collect::<Vec<_>>(), "dilution": 0.01 }]);
    std::fs::write(&experiment, json!({ "id": "e1", "triplicates": triplicates }).to_string())
        .map_err(|e| e.to_string())?;
    let cli_export = cfu(&["export", "--in", path(&filtered), "--experiment", path(&experiment)])?;

    let dataset = std::fs::read(case.join("dataset.json")).map_err(|e| e.to_string())?;
    let pngs: Vec<Vec<u8>> = (1..=IMAGES)
        .map(|k| std::fs::read(case.join(format!("image_{k}.png"))))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let store = Store::open(&data).map_err(|e| e.to_string())?;
    let app = router(AppState::new(store, ServiceConfig::default()));
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        // One upload per rendering, so each run starts from unfitted dishes.
        let mut ids = Vec::new();
        for _ in 0..2 {
            let created = call(&app, Method::POST, "/v1/datasets", dataset.clone()).await?;
            let created: serde_json::Value = serde_json::from_slice(&created).map_err(|e| e.to_string())?;
            let id = created["id"].as_str().ok_or("no dataset id")?.to_string();
            for (k, png) in pngs.iter().enumerate() {
                call(&app, Method::PUT, &format!("/v1/images/{id}:{}/pixels", k + 1), png.clone()).await?;
            }
            ids.push(id);
        }
        let text = call(&app, Method::POST, &format!("/v1/datasets/{}/postprocess?format=text", ids[0]), "{}").await?;
        same("post-processing summary (text)", &cli_summary_text, &text)?;
        let id = &ids[1];
        let summary = call(&app, Method::POST, &format!("/v1/datasets/{id}/postprocess"), "{}").await?;
        same("post-processing summary (json)", &cli_summary_json, &summary)?;

        let eval_json = call(&app, Method::POST, &format!("/v1/datasets/{id}/evaluate"), "{}").await?;
        same("evaluation report (json)", &cli_eval_json, &eval_json)?;
        let eval_text =
            call(&app, Method::POST, &format!("/v1/datasets/{id}/evaluate"), json!({ "format": "text" }).to_string())
                .await?;
        same("evaluation report (text)", &cli_eval_text, &eval_text)?;

        let body = json!({ "triplicates": triplicates }).to_string();
        call(&app, Method::PUT, &format!("/v1/experiments/{id}:e1/dilutions"), body).await?;
        let export = call(&app, Method::GET, &format!("/v1/experiments/{id}:e1/export?format=csv"), Body::empty()).await?;
        same("export CSV", &cli_export, &export)?;
        Ok::<_, String>(())
    })?;
    Ok("CLI and API render identical summary, evaluation and export bytes".into())
}
