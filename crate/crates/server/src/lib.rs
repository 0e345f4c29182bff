//! HTTP service over a dataset [`Store`], versioned under `/v1`.
//!
//! Every mutating endpoint appends one edit event; reads are served from a
//! snapshot. Composite handles `dsN:<id>` address images, instances and
//! experiments inside a dataset. Errors are JSON [`ApiError`] bodies.

mod error;
mod jobs;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cfu_core::evaluation::{review_report, EvalConfig, Rater};
use cfu_core::quant::{export_csv, export_experiment as quant_export, validate_experiment, TriplicateGroup};
use cfu_core::store::{
    decode_segmentation, fit_missing_ellipses, instance_to_entry, parse_dataset, to_json, EditAction,
    PipelineSummary, Segmentation, Snapshot, Store,
};
use cfu_core::{BBox, ClassLabel, EllipseModel, ExclusionReason, ImageId, InstanceId, PostProcConfig, Split};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use error::ApiError;
pub use jobs::{Job, JobState};

/// Defaults applied when a request leaves a setting out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceConfig {
    pub postproc: PostProcConfig,
    pub eval: EvalConfig,
}

struct Inner {
    store: Store,
    config: ServiceConfig,
    jobs: jobs::Jobs,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(store: Store, config: ServiceConfig) -> Self {
        Self(Arc::new(Inner { store, config, jobs: jobs::Jobs::default() }))
    }

    pub fn store(&self) -> &Store {
        &self.0.store
    }
}

type ApiResult<T> = Result<T, ApiError>;

const MAX_BODY: usize = 1 << 30;

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/datasets", get(list_datasets).post(create_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/summary", get(dataset_summary))
        .route("/datasets/{id}/events", get(dataset_events))
        .route("/datasets/{id}/postprocess", post(postprocess))
        .route("/datasets/{id}/evaluate", post(evaluate))
        .route("/jobs/{id}", get(job_status))
        .route("/images/{handle}", get(get_image))
        .route("/images/{handle}/instances", get(list_instances).post(create_instance))
        .route("/images/{handle}/ellipse", put(put_ellipse))
        .route("/images/{handle}/split", put(put_split))
        .route("/images/{handle}/pixels", get(get_pixels).put(put_pixels))
        .route("/instances/{handle}", put(update_instance).delete(delete_instance))
        .route("/experiments/{handle}", get(get_experiment))
        .route("/experiments/{handle}/dilutions", put(put_dilutions))
        .route("/experiments/{handle}/export", get(export_experiment));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::not_found("not_found", "no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&Inner) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let inner = state.0.clone();
    tokio::task::spawn_blocking(move || f(&inner)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::schema(&path, e.inner().to_string())
    })
}

/// Parses `body` onto `defaults`: fields present in the body override.
fn merge_json<T: Serialize + DeserializeOwned>(defaults: &T, body: &[u8]) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return parse_json(&serde_json::to_vec(defaults).expect("defaults serialize"));
    }
    let overrides: Value = parse_json(body)?;
    let Value::Object(overrides) = overrides else {
        return Err(ApiError::schema("", "expected a JSON object"));
    };
    let mut merged = serde_json::to_value(defaults).expect("defaults serialize");
    let obj = merged.as_object_mut().expect("struct serializes to an object");
    obj.extend(overrides);
    parse_json(&serde_json::to_vec(&merged).expect("value serializes"))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request("bad_query", e.body_text()))
}

/// Splits `dsN:rest`.
fn split_handle(handle: &str) -> ApiResult<(String, String)> {
    match handle.split_once(':') {
        Some((ds, rest)) if !ds.is_empty() && !rest.is_empty() => Ok((ds.to_string(), rest.to_string())),
        _ => Err(ApiError::bad_request("bad_handle", format!("expected <dataset>:<id>, got {handle:?}"))),
    }
}

fn numeric_handle(handle: &str) -> ApiResult<(String, u64)> {
    let (ds, rest) = split_handle(handle)?;
    let n = rest
        .parse()
        .map_err(|_| ApiError::bad_request("bad_handle", format!("{rest:?} is not a numeric id")))?;
    Ok((ds, n))
}

fn raw(content_type: &'static str, seq: u64, body: impl IntoResponse) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    headers.insert("x-seq", HeaderValue::from(seq));
    (headers, body).into_response()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    #[default]
    Json,
    Text,
    Csv,
}

// ---- datasets ----

async fn list_datasets(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    blocking(&state, |s| {
        let mut out = Vec::new();
        for id in s.store.list()? {
            let snap = s.store.snapshot(&id, None)?;
            out.push(json!({ "id": id, "name": snap.dataset.name, "seq": snap.seq, "images": snap.dataset.images.len() }));
        }
        Ok(Json(json!({ "datasets": out })))
    })
    .await
}

#[derive(Deserialize)]
struct CreateQuery {
    name: Option<String>,
}

async fn create_dataset(
    State(state): State<AppState>,
    q: Result<Query<CreateQuery>, QueryRejection>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let q = query(q)?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::schema("", "body is not UTF-8"))?;
    let mut ds = parse_dataset(text)?;
    if let Some(name) = q.name {
        ds.name = name;
    }
    blocking(&state, move |s| {
        let summary = json!({
            "name": ds.name,
            "images": ds.images.len(),
            "predictions": ds.predictions.len(),
            "ground_truth": ds.ground_truth.len(),
        });
        let id = s.store.create(ds)?;
        let mut body = summary;
        body["id"] = json!(id);
        Ok((StatusCode::CREATED, Json(body)))
    })
    .await
}

#[derive(Deserialize)]
struct SeqQuery {
    seq: Option<u64>,
}

async fn get_dataset(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<SeqQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    blocking(&state, move |s| {
        let snap = s.store.snapshot(&id, q.seq)?;
        Ok(raw("application/json", snap.seq, to_json(&snap.dataset)))
    })
    .await
}

async fn dataset_summary(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&state, move |s| {
        let snap = s.store.snapshot(&id, None)?;
        let ds = &snap.dataset;
        Ok(Json(json!({
            "id": id,
            "name": ds.name,
            "seq": snap.seq,
            "images": ds.images.iter().map(|i| format!("{id}:{}", i.id)).collect::<Vec<_>>(),
            "counts": cfu_core::store::summarize(ds),
            "postproc": snap.postproc,
            "experiments": snap.experiments.keys().map(|e| format!("{id}:{e}")).collect::<Vec<_>>(),
        })))
    })
    .await
}

#[derive(Deserialize)]
struct EventsQuery {
    since: Option<u64>,
}

async fn dataset_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<EventsQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let since = query(q)?.since.unwrap_or(0);
    blocking(&state, move |s| {
        let events: Vec<_> = s.store.events(&id)?.into_iter().filter(|e| e.seq > since).collect();
        Ok(Json(json!({ "events": events })))
    })
    .await
}

#[derive(Deserialize)]
struct PostprocessQuery {
    #[serde(rename = "async", default)]
    background: bool,
    #[serde(default)]
    format: Format,
}

/// Fits missing ellipses from stored pixels and appends a pipeline run.
fn run_postprocess(
    store: &Store,
    id: &str,
    config: PostProcConfig,
    phase: &dyn Fn(&str),
) -> ApiResult<(u64, PipelineSummary)> {
    config.validate()?;
    phase("fitting_ellipses");
    let snap = store.snapshot(id, None)?;
    let (fitted, _) = fit_missing_ellipses(&snap.dataset, |img| store.gray(id, img.id).ok().flatten());
    let fitted_ids: Vec<ImageId> = fitted.keys().copied().collect();
    phase("filtering");
    let event = store.append(id, "system", EditAction::ApplyPipeline { config, fitted_ellipses: fitted })?;
    let snap = store.snapshot(id, Some(event.seq))?;
    Ok((event.seq, PipelineSummary::new(&snap.dataset, config, fitted_ids)))
}

async fn postprocess(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<PostprocessQuery>, QueryRejection>,
    body: Bytes,
) -> ApiResult<Response> {
    let q = query(q)?;
    let config: PostProcConfig = merge_json(&state.0.config.postproc, &body)?;
    config.validate()?;
    // Existence check up front so an async run fails fast with 404.
    {
        let id = id.clone();
        blocking(&state, move |s| s.store.snapshot(&id, None).map(|_| ()).map_err(Into::into)).await?;
    }
    if q.background {
        let job = state.0.jobs.start(&id);
        let inner = state.0.clone();
        tokio::task::spawn_blocking(move || {
            let outcome = run_postprocess(&inner.store, &id, config, &|p| inner.jobs.phase(job, p));
            inner.jobs.finish(job, outcome);
        });
        let body = json!({ "job_id": job, "status_url": format!("/v1/jobs/{job}") });
        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
    }
    let (seq, summary) = blocking(&state, move |s| run_postprocess(&s.store, &id, config, &|_| {})).await?;
    Ok(match q.format {
        Format::Text => raw("text/plain; charset=utf-8", seq, summary.render_text()),
        _ => raw("application/json", seq, summary.render_json()),
    })
}

async fn job_status(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    state
        .0
        .jobs
        .get(id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found("unknown_job", format!("unknown job {id}")))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvaluateBody {
    #[serde(default)]
    config: Option<EvalConfig>,
    #[serde(default)]
    raters: Vec<Rater>,
    #[serde(default)]
    format: Format,
}

async fn evaluate(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: EvaluateBody =
        if body.iter().all(u8::is_ascii_whitespace) { EvaluateBody::default() } else { parse_json(&body)? };
    let cfg = req.config.unwrap_or_else(|| state.0.config.eval.clone());
    blocking(&state, move |s| {
        let snap = s.store.snapshot(&id, None)?;
        let report = review_report(&snap.dataset, &cfg, &req.raters)?;
        Ok(match req.format {
            Format::Text => raw("text/plain; charset=utf-8", snap.seq, report.render_text()),
            _ => raw("application/json", snap.seq, report.render_json()),
        })
    })
    .await
}

// ---- images ----

fn image_of(snap: &Snapshot, image: u64) -> ApiResult<&cfu_core::ImageRecord> {
    snap.dataset
        .image(ImageId(image))
        .ok_or_else(|| ApiError::not_found("unknown_image", format!("unknown image {image}")))
}

fn image_counts(snap: &Snapshot, image: ImageId) -> cfu_core::postproc::ReasonCounts {
    cfu_core::postproc::ReasonCounts::tally(snap.dataset.predictions_for(image))
}

async fn get_image(State(state): State<AppState>, Path(handle): Path<String>) -> ApiResult<Json<Value>> {
    let (id, image) = numeric_handle(&handle)?;
    blocking(&state, move |s| {
        let snap = s.store.snapshot(&id, None)?;
        let rec = image_of(&snap, image)?;
        let has_pixels = s.store.pixels_png(&id, rec.id)?.is_some();
        Ok(Json(json!({
            "handle": handle,
            "seq": snap.seq,
            "image": rec,
            "has_pixels": has_pixels,
            "counts": image_counts(&snap, rec.id),
        })))
    })
    .await
}

#[derive(Deserialize)]
struct InstancesQuery {
    #[serde(default)]
    include_excluded: bool,
    #[serde(default)]
    include_ground_truth: bool,
}

async fn list_instances(
    State(state): State<AppState>,
    Path(handle): Path<String>,
    q: Result<Query<InstancesQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let (id, image) = numeric_handle(&handle)?;
    blocking(&state, move |s| {
        let snap = s.store.snapshot(&id, None)?;
        let rec = image_of(&snap, image)?;
        let mut preds: Vec<_> =
            snap.dataset.predictions_for(rec.id).filter(|p| q.include_excluded || p.is_kept()).collect();
        preds.sort_by_key(|p| p.id);
        let mut body = json!({
            "image": handle,
            "seq": snap.seq,
            "instances": preds.iter().map(|p| instance_to_entry(p, false)).collect::<Vec<_>>(),
        });
        if q.include_ground_truth {
            let mut gts: Vec<_> = snap.dataset.ground_truth_for(rec.id).collect();
            gts.sort_by_key(|g| g.id);
            body["ground_truth"] = json!(gts.iter().map(|g| instance_to_entry(g, true)).collect::<Vec<_>>());
        }
        Ok(Json(body))
    })
    .await
}

/// A reviewer-drawn colony: a box `[x, y, w, h]`, a segmentation, or both
/// (the box is then derived from the mask).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewInstance {
    category_id: u32,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    segmentation: Option<Segmentation>,
}

async fn create_instance(
    State(state): State<AppState>,
    Path(handle): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let (id, image) = numeric_handle(&handle)?;
    let req: NewInstance = parse_json(&body)?;
    let label = ClassLabel::from_category_id(req.category_id).ok_or_else(|| {
        ApiError::schema("category_id", format!("unknown category {}", req.category_id))
    })?;
    blocking(&state, move |s| {
        let event = s.store.append_with(&id, "reviewer", now(), |snap| {
            let rec = snap.dataset.image(ImageId(image)).ok_or(cfu_core::store::StoreError::UnknownImage(ImageId(image)))?;
            let mask = match &req.segmentation {
                Some(seg) => Some(decode_segmentation(seg, rec.width, rec.height, "segmentation")?),
                None => None,
            };
            Ok(EditAction::CreateInstance {
                instance_id: snap.dataset.next_instance_id(),
                image_id: rec.id,
                label,
                bbox: req.bbox.map(|[x, y, w, h]| BBox::from_xywh(x, y, w, h)),
                mask,
            })
        })?;
        let EditAction::CreateInstance { instance_id, .. } = event.action else { unreachable!() };
        let snap = s.store.snapshot(&id, Some(event.seq))?;
        let inst = snap.dataset.prediction(instance_id).expect("just created");
        Ok((
            StatusCode::CREATED,
            Json(json!({
                "handle": format!("{id}:{instance_id}"),
                "seq": event.seq,
                "instance": instance_to_entry(inst, false),
            })),
        ))
    })
    .await
}

async fn put_ellipse(State(state): State<AppState>, Path(handle): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let (id, image) = numeric_handle(&handle)?;
    let ellipse: EllipseModel = parse_json(&body)?;
    blocking(&state, move |s| {
        let event = s.store.append(&id, "reviewer", EditAction::MoveEllipse { image_id: ImageId(image), ellipse })?;
        let snap = s.store.snapshot(&id, Some(event.seq))?;
        let ids = |r: ExclusionReason| -> Vec<InstanceId> {
            snap.dataset.predictions_for(ImageId(image)).filter(|p| p.excluded == Some(r)).map(|p| p.id).collect()
        };
        Ok(Json(json!({
            "image": handle,
            "seq": event.seq,
            "ellipse": ellipse,
            "outside_dish": ids(ExclusionReason::OutsideDish),
            "area_outlier": ids(ExclusionReason::AreaOutlier),
            "counts": image_counts(&snap, ImageId(image)),
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitBody {
    split: Split,
}

async fn put_split(State(state): State<AppState>, Path(handle): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let (id, image) = numeric_handle(&handle)?;
    let req: SplitBody = parse_json(&body)?;
    blocking(&state, move |s| {
        let event = s.store.append(&id, "reviewer", EditAction::SetSplit { image_id: ImageId(image), split: req.split })?;
        Ok(Json(json!({ "image": handle, "seq": event.seq, "split": req.split })))
    })
    .await
}

async fn get_pixels(State(state): State<AppState>, Path(handle): Path<String>) -> ApiResult<Response> {
    let (id, image) = numeric_handle(&handle)?;
    blocking(&state, move |s| {
        let png = s
            .store
            .pixels_png(&id, ImageId(image))?
            .ok_or_else(|| ApiError::not_found("no_pixels", format!("no pixels stored for {handle}")))?;
        Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
    })
    .await
}

async fn put_pixels(State(state): State<AppState>, Path(handle): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    let (id, image) = numeric_handle(&handle)?;
    blocking(&state, move |s| {
        s.store.put_pixels(&id, ImageId(image), &body)?;
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

// ---- instances ----

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum InstanceUpdate {
    ChangeClass { category_id: u32 },
    Validate,
    Invalidate,
    Restore,
}

fn instance_response(s: &Inner, id: &str, instance: InstanceId, seq: u64) -> ApiResult<Json<Value>> {
    let snap = s.store.snapshot(id, Some(seq))?;
    let inst = snap.dataset.prediction(instance).expect("edited instance exists");
    Ok(Json(json!({
        "handle": format!("{id}:{instance}"),
        "seq": seq,
        "instance": instance_to_entry(inst, false),
        "image_counts": image_counts(&snap, inst.image_id),
    })))
}

async fn update_instance(
    State(state): State<AppState>,
    Path(handle): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let (id, n) = numeric_handle(&handle)?;
    let instance_id = InstanceId(n);
    let action = match parse_json::<InstanceUpdate>(&body)? {
        InstanceUpdate::ChangeClass { category_id } => EditAction::ChangeClass {
            instance_id,
            label: ClassLabel::from_category_id(category_id).ok_or_else(|| {
                ApiError::schema("category_id", format!("unknown category {category_id}"))
            })?,
        },
        InstanceUpdate::Validate => EditAction::ValidateUnsure { instance_id },
        InstanceUpdate::Invalidate => EditAction::InvalidateUnsure { instance_id },
        InstanceUpdate::Restore => EditAction::RestoreExcluded { instance_id },
    };
    blocking(&state, move |s| {
        let event = s.store.append(&id, "reviewer", action)?;
        instance_response(s, &id, instance_id, event.seq)
    })
    .await
}

async fn delete_instance(State(state): State<AppState>, Path(handle): Path<String>) -> ApiResult<Json<Value>> {
    let (id, n) = numeric_handle(&handle)?;
    blocking(&state, move |s| {
        let event = s.store.append(&id, "reviewer", EditAction::DeleteInstance { instance_id: InstanceId(n) })?;
        instance_response(s, &id, InstanceId(n), event.seq)
    })
    .await
}

// ---- experiments ----

fn experiment_of<'a>(snap: &'a Snapshot, exp: &str) -> ApiResult<&'a cfu_core::quant::Experiment> {
    snap.experiments
        .get(exp)
        .ok_or_else(|| ApiError::not_found("unknown_experiment", format!("unknown experiment {exp}")))
}

async fn get_experiment(State(state): State<AppState>, Path(handle): Path<String>) -> ApiResult<Json<Value>> {
    let (id, exp) = split_handle(&handle)?;
    blocking(&state, move |s| {
        let snap = s.store.snapshot(&id, None)?;
        let e = experiment_of(&snap, &exp)?;
        Ok(Json(json!({
            "handle": handle,
            "seq": snap.seq,
            "experiment": e,
            "diagnostics": validate_experiment(e, Some(&snap.dataset)),
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DilutionsBody {
    triplicates: Vec<TriplicateGroup>,
}

async fn put_dilutions(State(state): State<AppState>, Path(handle): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let (id, exp) = split_handle(&handle)?;
    let req: DilutionsBody = parse_json(&body)?;
    blocking(&state, move |s| {
        let event = s.store.append(
            &id,
            "reviewer",
            EditAction::SetDilution { experiment_id: exp.clone(), triplicates: req.triplicates },
        )?;
        let snap = s.store.snapshot(&id, Some(event.seq))?;
        let e = experiment_of(&snap, &exp)?;
        Ok(Json(json!({
            "handle": handle,
            "seq": event.seq,
            "experiment": e,
            "diagnostics": validate_experiment(e, Some(&snap.dataset)),
        })))
    })
    .await
}

#[derive(Deserialize)]
struct ExportQuery {
    level: Option<f64>,
    #[serde(default)]
    format: Format,
}

async fn export_experiment(
    State(state): State<AppState>,
    Path(handle): Path<String>,
    q: Result<Query<ExportQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let (id, exp) = split_handle(&handle)?;
    let level = q.level.unwrap_or(0.95);
    blocking(&state, move |s| {
        let snap = s.store.snapshot(&id, None)?;
        let report = quant_export(experiment_of(&snap, &exp)?, &snap.dataset, level)?;
        let csv = export_csv(&report);
        Ok(match q.format {
            Format::Csv => {
                let mut r = raw("text/csv; charset=utf-8", snap.seq, csv);
                r.headers_mut().insert("x-warnings", HeaderValue::from(report.warnings.len()));
                r
            }
            _ => {
                let body = json!({ "seq": snap.seq, "csv": csv, "warnings": report.warnings, "report": report });
                Json(body).into_response()
            }
        })
    })
    .await
}

fn now() -> cfu_core::store::Timestamp {
    cfu_core::store::Timestamp::from(std::time::SystemTime::now())
}
