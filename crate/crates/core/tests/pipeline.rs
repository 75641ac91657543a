use ratlab_core::data::{gen_graphs, gen_text, read_jsonl, write_jsonl, GraphGenSpec, TextGenSpec};
use ratlab_core::evaluation::evaluate;
use ratlab_core::rationalization::{train, Game, GameConfig, Modality, ObjectiveKind};

fn small_text() -> TextGenSpec {
    TextGenSpec {
        train_size: 64,
        dev_size: 16,
        test_size: 16,
        ..TextGenSpec::default()
    }
}

fn config(objective: ObjectiveKind) -> GameConfig {
    GameConfig {
        objective,
        epochs: 2,
        embedding_dim: 8,
        hidden_dim: 8,
        batch_size: 16,
        ..GameConfig::default()
    }
}

#[test]
fn text_game_trains_and_evaluates_for_every_objective() {
    let splits = gen_text(&small_text()).unwrap();
    let modality = Modality::infer(&splits.train).unwrap();
    for objective in ObjectiveKind::ALL {
        let mut game = Game::new(config(objective), modality).unwrap();
        let mut seen = 0;
        let records = train(&mut game, &splits.train, &splits.dev, |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!((records.len(), seen), (2, 2));
        for r in &records {
            assert!(r.pred_loss.is_finite() && r.ext_loss.is_finite(), "{objective}: {r:?}");
            assert!(r.dev.is_some());
        }
        let m = evaluate(&game, &splits.test).unwrap();
        assert_eq!(m.examples, 16);
        assert!((0.0..=1.0).contains(&m.s) && (0.0..=1.0).contains(&m.acc));
        assert!(m.f1.is_some());
    }
}

#[test]
fn graph_game_trains_on_generated_graphs() {
    let spec = GraphGenSpec {
        train_size: 32,
        dev_size: 8,
        test_size: 8,
        ..GraphGenSpec::default()
    };
    let splits = gen_graphs(&spec).unwrap();
    let modality = Modality::infer(&splits.train).unwrap();
    assert_eq!(modality, Modality::Graph { feature_dim: spec.row_width() });
    let mut game = Game::new(config(ObjectiveKind::N2r), modality).unwrap();
    train(&mut game, &splits.train, &splits.dev, |_| Ok(())).unwrap();
    let m = evaluate(&game, &splits.test).unwrap();
    assert!(m.mean_norm.is_finite() && m.mean_norm >= 0.0);
    assert!(m.acc.is_finite() && m.f1.is_some());
}

#[test]
fn identical_seeds_give_identical_training_and_jsonl_preserves_it() {
    let splits = gen_text(&small_text()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    write_jsonl(&splits.train, &path).unwrap();
    let reread = read_jsonl(&path).unwrap();
    assert_eq!(reread, splits.train);

    let run = |train_split| {
        let mut game = Game::new(config(ObjectiveKind::Mmi), Modality::infer(&splits.train).unwrap()).unwrap();
        let records = train(&mut game, train_split, &splits.dev, |_| Ok(())).unwrap();
        let m = evaluate(&game, &splits.test).unwrap();
        (format!("{records:?}"), format!("{m:?}"))
    };
    assert_eq!(run(&splits.train), run(&reread));
}
