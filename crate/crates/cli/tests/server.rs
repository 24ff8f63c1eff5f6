use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use segfactory::dataset::{DatasetManifest, ManifestStore};
use segfactory::synthetic::{write_synthetic_dataset, SyntheticParams};
use segfactory_cli::server::router;

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: PathBuf,
}

fn fixture(count: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ds");
    let manifest = root.join("manifest.json");
    write_synthetic_dataset(&manifest, &SyntheticParams::default(), count, 5).unwrap();
    let code = segfactory_cli::run(["segfactory", "--manifest", manifest.to_str().unwrap(), "label"]);
    assert_eq!(code, 0);
    Fixture { _dir: dir, manifest }
}

fn app(f: &Fixture) -> Router {
    router(ManifestStore::open(&f.manifest).unwrap(), None)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    post_raw(app, uri, body.to_string()).await
}

async fn post_raw(app: &Router, uri: &str, body: String) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn scene_list_is_paged_and_filtered() {
    let f = fixture(7);
    let app = app(&f);
    let (s, v) = get_json(&app, "/api/scenes?offset=2&limit=3").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 7);
    let ids: Vec<&str> = v["scenes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["scene_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["scene-0002", "scene-0003", "scene-0004"]);
    assert_eq!(v["scenes"][0]["decision_source"], "heuristic");

    let (_, decided) = get_json(&app, "/api/scenes?filter=decided").await;
    let (_, rejected) = get_json(&app, "/api/scenes?filter=rejected").await;
    let (_, undecided) = get_json(&app, "/api/scenes?filter=undecided").await;
    let total = decided["total"].as_u64().unwrap() + rejected["total"].as_u64().unwrap();
    assert_eq!(total, 7);
    assert_eq!(undecided["total"], 0);

    assert_eq!(
        get_json(&app, "/api/scenes?filter=bogus").await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(get_json(&app, "/api/scenes?limit=0").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get_json(&app, "/api/scenes?offset=x").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn scene_detail_links_overlays_and_stats() {
    let f = fixture(2);
    let app = app(&f);
    let (s, v) = get_json(&app, "/api/scenes/scene-0001").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["image_url"], "/files/scenes/scene-0001/image.png");
    assert_eq!(v["class_name"], "class-2");
    for kind in ["hsv", "rgb", "saliency"] {
        let url = v["overlays"][kind].as_str().unwrap();
        assert_eq!(url, format!("/files/scenes/scene-0001/overlays/{kind}.png"));
        let (status, png) = call(&app, Request::get(url).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(&png[1..4], b"PNG");
        let c = &v["candidates"][kind];
        let areas: u64 = c["areas"].as_array().unwrap().iter().map(|a| a.as_u64().unwrap()).sum();
        assert_eq!(c["total_area"], areas);
        assert_eq!(c["count"], c["bboxes"].as_array().unwrap().len());
    }
    assert_eq!(get_json(&app, "/api/scenes/nope").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn decision_round_trip() {
    let f = fixture(3);
    let app = app(&f);
    let (s, v) = post_json(&app, "/api/scenes/scene-0000/decision", &json!({"choice": "rgb"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["decision"], "rgb");
    assert_eq!(v["decision_source"], "human");
    let (_, v) = get_json(&app, "/api/scenes/scene-0000").await;
    assert_eq!(v["decision"], "rgb");
    assert_eq!(v["decision_source"], "human");
    let m = DatasetManifest::load(&f.manifest).unwrap();
    assert_eq!(m.scenes[0].decision().as_str(), "rgb");

    let (_, p) = get_json(&app, "/api/progress").await;
    assert_eq!(p["human"], 1);
    assert_eq!(p["total"], 3);
}

#[tokio::test]
async fn invalid_requests() {
    let f = fixture(1);
    let app = app(&f);
    let uri = "/api/scenes/scene-0000/decision";
    assert_eq!(
        post_json(&app, uri, &json!({"choice": "bogus"})).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        post_json(&app, uri, &json!({"choice": "undecided"})).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        post_json(&app, uri, &json!({"pick": "hsv"})).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(post_raw(&app, uri, "{not json".into()).await.0, StatusCode::BAD_REQUEST);
    let (s, v) = post_json(&app, "/api/scenes/ghost/decision", &json!({"choice": "hsv"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("ghost"));
    assert_eq!(get_json(&app, "/api/nothing").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stale_revision_conflicts() {
    let f = fixture(1);
    let app = app(&f);
    let (_, v) = get_json(&app, "/api/scenes/scene-0000").await;
    let rev = v["revision"].as_u64().unwrap();
    let uri = "/api/scenes/scene-0000/decision";
    let (s, v) = post_json(&app, uri, &json!({"choice": "reject", "revision": rev})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["revision"], rev + 1);
    let (s, _) = post_json(&app, uri, &json!({"choice": "hsv", "revision": rev})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, v) = get_json(&app, "/api/scenes/scene-0000").await;
    assert_eq!(v["decision"], "reject");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_writers_keep_the_manifest_whole() {
    let f = fixture(2);
    let app = app(&f);
    let start = get_json(&app, "/api/scenes/scene-0001").await.1["revision"]
        .as_u64()
        .unwrap();
    let choices = ["hsv", "rgb", "saliency", "reject"];
    let tasks: Vec<_> = (0..24)
        .map(|i| {
            let app = app.clone();
            let body = json!({"choice": choices[i % 4]});
            tokio::spawn(async move { post_json(&app, "/api/scenes/scene-0001/decision", &body).await })
        })
        .collect();
    let mut accepted = Vec::new();
    for t in tasks {
        let (s, v) = t.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        accepted.push((
            v["revision"].as_u64().unwrap(),
            v["decision"].as_str().unwrap().to_string(),
        ));
    }
    accepted.sort();
    let revs: Vec<u64> = accepted.iter().map(|a| a.0).collect();
    assert_eq!(revs, (start + 1..=start + 24).collect::<Vec<_>>());
    let m = DatasetManifest::load(&f.manifest).unwrap();
    let last = accepted.last().unwrap();
    assert_eq!(m.scenes[1].revision, last.0);
    assert_eq!(m.scenes[1].decision().as_str(), last.1);

    // both writers saw the same revision: exactly one wins
    let rev = m.scenes[0].revision;
    let a = {
        let app = app.clone();
        tokio::spawn(async move {
            post_json(
                &app,
                "/api/scenes/scene-0000/decision",
                &json!({"choice": "hsv", "revision": rev}),
            )
            .await
        })
    };
    let b = {
        let app = app.clone();
        tokio::spawn(async move {
            post_json(
                &app,
                "/api/scenes/scene-0000/decision",
                &json!({"choice": "rgb", "revision": rev}),
            )
            .await
        })
    };
    let mut codes = [a.await.unwrap().0, b.await.unwrap().0];
    codes.sort();
    assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn files_stay_inside_the_dataset() {
    let f = fixture(1);
    let secret = f.manifest.parent().unwrap().parent().unwrap().join("secret.txt");
    std::fs::write(&secret, "top secret").unwrap();
    let app = app(&f);
    for uri in [
        "/files/../secret.txt",
        "/files/..%2Fsecret.txt",
        "/files/%2e%2e/secret.txt",
        "/files/scenes/../../secret.txt",
    ] {
        let (s, body) = call(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
        assert!(!body.windows(10).any(|w| w == b"top secret"), "{uri} leaked");
        assert_ne!(s, StatusCode::OK, "{uri}");
    }
    let (s, _) = call(
        &app,
        Request::get("/files/scenes/scene-0000/image.png")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn ui_bundle_is_served_with_index_fallback() {
    let f = fixture(1);
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>review</html>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let app = router(ManifestStore::open(&f.manifest).unwrap(), Some(ui.path().to_path_buf()));
    let (s, b) = call(&app, Request::get("/app.js").body(Body::empty()).unwrap()).await;
    assert_eq!((s, b.as_slice()), (StatusCode::OK, b"console.log(1)".as_slice()));
    let (s, b) = call(&app, Request::get("/scenes/scene-0000").body(Body::empty()).unwrap()).await;
    assert_eq!((s, b.as_slice()), (StatusCode::OK, b"<html>review</html>".as_slice()));
    assert_eq!(get_json(&app, "/api/progress").await.0, StatusCode::OK);
}
