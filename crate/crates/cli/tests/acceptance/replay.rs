//! Random edit logs replayed from their base, in memory and through the
//! on-disk store.

use std::collections::BTreeMap;

use cfu_core::quant::{DilutionFactor, TriplicateGroup};
use cfu_core::store::{replay, EditAction, EditEvent, Snapshot, Store, Timestamp};
use cfu_core::synth::{generate_case, SynthConfig};
use cfu_core::{BBox, ClassLabel, Dataset, EllipseModel, ImageId, InstanceId, PostProcConfig, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

fn base(seed: u64) -> Result<Dataset, String> {
    let mut ds = Dataset { name: format!("replay-{seed}"), ..Default::default() };
    for k in 1..=2u64 {
        let c = generate_case(&SynthConfig {
            seed: seed * 10 + k,
            image_id: k,
            width: 192,
            height: 192,
            n_colonies: 10,
            attach_dish: true,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        ds.images.extend(c.dataset.images);
        ds.ground_truth.extend(c.dataset.ground_truth);
        ds.predictions.extend(c.dataset.predictions);
    }
    Ok(ds)
}

fn ts(k: u64) -> Timestamp {
    Timestamp::from_timestamp(1_700_000_000 + k as i64, 0).expect("in range")
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, v: &[T]) -> Option<T> {
    (!v.is_empty()).then(|| v[rng.random_range(0..v.len())])
}

/// An edit that is usually, not always, valid against `snap`.
fn random_action(rng: &mut ChaCha8Rng, snap: &Snapshot) -> EditAction {
    let ds = &snap.dataset;
    let images: Vec<ImageId> = ds.images.iter().map(|i| i.id).collect();
    let of = |f: &dyn Fn(&cfu_core::Instance) -> bool| -> Vec<InstanceId> {
        ds.predictions.iter().filter(|p| f(p)).map(|p| p.id).collect()
    };
    let all = of(&|_| true);
    let kept = of(&|p| p.is_kept());
    let excluded = of(&|p| !p.is_kept());
    let unsure = of(&|p| p.unsure);
    let label = if rng.random_bool(0.5) { ClassLabel::BvgPlus } else { ClassLabel::BvgMinus };
    let image = pick(rng, &images).expect("images");
    let any = |rng: &mut ChaCha8Rng, v: &[InstanceId]| pick(rng, v).unwrap_or(InstanceId(u64::MAX));
    match rng.random_range(0..13) {
        0 => {
            let (x, y) = (rng.random_range(0.0..150.0), rng.random_range(0.0..150.0));
            EditAction::CreateInstance {
                instance_id: ds.next_instance_id(),
                image_id: image,
                label,
                bbox: Some(BBox::new(x, y, x + rng.random_range(1.0..30.0), y + rng.random_range(1.0..30.0))),
                mask: None,
            }
        }
        1 => EditAction::DeleteInstance { instance_id: any(rng, &kept) },
        2 => EditAction::ChangeClass { instance_id: any(rng, &all), label },
        3 => EditAction::ValidateUnsure { instance_id: any(rng, &unsure) },
        4 => EditAction::InvalidateUnsure { instance_id: any(rng, &unsure) },
        5 => EditAction::RestoreExcluded { instance_id: any(rng, &excluded) },
        6 => EditAction::SetSplit { image_id: image, split: Split::ALL[rng.random_range(0..4)] },
        7 => EditAction::SetDilution {
            experiment_id: format!("e{}", rng.random_range(1..3)),
            triplicates: vec![TriplicateGroup {
                image_ids: images.clone(),
                dilution: DilutionFactor::new([1.0, 0.1, 0.01][rng.random_range(0..3)]).expect("valid"),
            }],
        },
        8 => EditAction::DeleteInstance { instance_id: any(rng, &excluded) },
        9 | 10 => {
            let e = ds.image(image).and_then(|i| i.dish_ellipse).expect("attached dish");
            let s = rng.random_range(0.9..1.1);
            EditAction::MoveEllipse {
                image_id: image,
                ellipse: EllipseModel { cx: e.cx + rng.random_range(-3.0..3.0), a: e.a * s, b: e.b * s, ..e },
            }
        }
        _ => EditAction::ApplyPipeline {
            config: PostProcConfig {
                score_threshold: rng.random_range(0.5..0.9),
                dup_iou_threshold: rng.random_range(0.5..0.9),
                ..PostProcConfig::default()
            },
            fitted_ellipses: BTreeMap::new(),
        },
    }
}

/// `n` random sequences. Each is folded live, replayed from its base at
/// every prefix, round-tripped through JSON lines and replayed again; every
/// tenth also goes through the store and a reopen.
pub fn random_sequences(n: usize) -> Outcome {
    let bases: Vec<Dataset> = (0..8).map(base).collect::<Result<_, _>>()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let mut stored: Vec<(String, Snapshot)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7265_706c);
    let mut accepted = 0;
    for k in 0..n {
        let b = &bases[k % bases.len()];
        let len = rng.random_range(1..=30);
        let mut live = Snapshot::from_base(b.clone());
        let mut events = Vec::new();
        let mut states = vec![live.clone()];
        for _ in 0..len {
            let e = EditEvent {
                seq: live.seq + 1,
                actor: format!("u{}", rng.random_range(0..3)),
                timestamp: ts(live.seq),
                action: random_action(&mut rng, &live),
            };
            let before = live.clone();
            if live.apply(&e).is_ok() {
                events.push(e);
                states.push(live.clone());
            } else {
                ensure!(live == before, "sequence {k}: rejected edit changed state");
            }
        }
        accepted += events.len();
        for (upto, st) in states.iter().enumerate() {
            let r = replay(b, &events, Some(upto as u64)).map_err(|e| format!("sequence {k}: {e}"))?;
            ensure!(&r == st, "sequence {k}: replay to {upto} differs from the live fold");
        }
        let lines: String = events.iter().map(|e| serde_json::to_string(e).expect("serializes") + "\n").collect();
        let parsed: Vec<EditEvent> =
            lines.lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        ensure!(replay(b, &parsed, None).as_ref() == Ok(&live), "sequence {k}: JSON lines replay differs");

        if k % 10 == 0 {
            let id = store.create(b.clone()).map_err(|e| e.to_string())?;
            for e in &events {
                store
                    .append_with(&id, &e.actor, e.timestamp, |_| Ok(e.action.clone()))
                    .map_err(|err| format!("sequence {k}: store rejected a replayable edit: {err}"))?;
            }
            let head = store.snapshot(&id, None).map_err(|e| e.to_string())?;
            let mut want = live.clone();
            want.dataset.id = id.clone();
            ensure!(head == want, "sequence {k}: store head differs from the live fold");
            stored.push((id, head));
        }
    }
    drop(store);
    let reopened = Store::open(dir.path()).map_err(|e| e.to_string())?;
    for (id, head) in &stored {
        ensure!(&reopened.snapshot(id, None).map_err(|e| e.to_string())? == head, "{id}: differs after reopen");
    }
    Ok(format!("{n} sequences ({accepted} events) replay identically, {} through the store", stored.len()))
}
