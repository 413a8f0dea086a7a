use textdate::corpus::SplitFractions;
use textdate::eval::{generate_corpus, run_protocol, write_tsv, MethodSpec, ProtocolOptions, SyntheticModel};
use textdate::mt::MtConfig;
use textdate::{Document, Error};

fn corpus(n: usize, seed: u64) -> Vec<Document> {
    let model = SyntheticModel::two_regime(10, (1100, 1199), 1150).unwrap();
    generate_corpus(&model, n, seed).unwrap()
}

fn methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::knn(&[1], &[5, 10]),
        MethodSpec::mp(1, &[4.0, 8.0], &[3.0, f64::INFINITY]),
        MethodSpec::qr(1, &[0.1], &[5.0]),
        MethodSpec::Mt { config: MtConfig::default() },
        MethodSpec::Mean,
    ]
}

fn options(seed: u64) -> ProtocolOptions {
    ProtocolOptions {
        fractions: SplitFractions::new(0.7, 0.15, 0.15).unwrap(),
        seed,
        blend: true,
        ..ProtocolOptions::default()
    }
}

fn tsv(docs: &[Document], methods: &[MethodSpec], opts: &ProtocolOptions) -> String {
    let mut buf = Vec::new();
    write_tsv(&mut buf, &run_protocol(docs, methods, opts).unwrap()).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn same_seed_same_report() {
    let docs = corpus(240, 1);
    let a = tsv(&docs, &methods(), &options(5));
    assert_eq!(a, tsv(&docs, &methods(), &options(5)));
    assert_ne!(a, tsv(&docs, &methods(), &options(6)));
}

#[test]
fn reports_satisfy_basic_inequalities() {
    let res = run_protocol(&corpus(240, 2), &methods(), &options(0)).unwrap();
    assert_eq!((res.n_train, res.n_validation, res.n_test), (168, 36, 36));
    for r in res.reports() {
        assert!(r.rmse >= r.mae && r.mae >= 0.0, "{}", r.method);
        assert_eq!(r.n(), 36);
        assert_eq!(r.n_failed, r.per_doc.iter().filter(|p| p.failed).count());
    }
    let mean = res.get("mean").unwrap().test.as_ref().unwrap().medae;
    let mp = res.get("mp1").unwrap().test.as_ref().unwrap().medae;
    assert!(mp < mean, "mp {mp} vs mean {mean}");
    let (names, weights) = res.blend.as_ref().unwrap();
    assert_eq!(names.len(), 5);
    assert!((weights.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn a_failing_method_is_reported_without_stopping_the_run() {
    let mut ms = methods();
    ms.push(MethodSpec::custom("broken", |_| Err(Error::Numerical("no".into()))));
    ms.push(MethodSpec::custom("flaky", |d: &Document| {
        if d.id.ends_with('3') {
            Err(Error::Undatable { id: d.id.clone(), reason: "skip".into() })
        } else {
            Ok(1150.0)
        }
    }));
    let res = run_protocol(&corpus(240, 3), &ms, &options(0)).unwrap();
    let broken = res.get("broken").unwrap();
    assert!(broken.error.is_none());
    assert_eq!(broken.test.as_ref().unwrap().n_failed, 36);
    let flaky = res.get("flaky").unwrap().test.as_ref().unwrap();
    assert!(flaky.n_failed > 0 && flaky.n_failed < 36);
    assert!(res.get("mp1").unwrap().error.is_none());

    let bad = vec![MethodSpec::knn(&[1], &[])];
    let res = run_protocol(&corpus(100, 4), &bad, &ProtocolOptions::default()).unwrap();
    assert!(res.results[0].error.is_some());
}

#[test]
fn merged_validation_pools_val_and_test() {
    let opts = ProtocolOptions {
        merge_validation: true,
        ..options(0)
    };
    let res = run_protocol(&corpus(240, 5), &methods(), &opts).unwrap();
    for r in &res.results {
        assert!(r.validation.is_none(), "{}", r.method);
        let t = r.test.as_ref().unwrap();
        assert_eq!(t.split, "val+test");
        assert_eq!(t.n(), 72);
    }
}

#[test]
fn undated_documents_are_rejected() {
    let mut docs = corpus(50, 6);
    docs[7].year = None;
    assert!(matches!(
        run_protocol(&docs, &methods(), &ProtocolOptions::default()),
        Err(Error::MissingYear { .. })
    ));
}
