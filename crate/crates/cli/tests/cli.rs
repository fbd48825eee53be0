use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exceedance"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small station file; every value equals `value`.
fn constant_stations(path: &Path, value: f64) {
    let mut s = String::from("station_id,x,y,date,value\n");
    for (id, x, y) in [
        ("a", 0.0, 0.0),
        ("b", 3.0, 0.0),
        ("c", 0.0, 3.0),
        ("d", 3.0, 3.0),
        ("e", 1.5, 1.0),
    ] {
        for day in 1..=20 {
            s.push_str(&format!("{id},{x},{y},2004-01-{day:02},{value}\n"));
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    for cmd in [
        "simulate",
        "smooth",
        "fit",
        "krige",
        "map",
        "crossval",
        "experiment",
    ] {
        assert_eq!(code(&[cmd, "--help"]), 0, "{cmd} --help");
    }
}

#[test]
fn invalid_usage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["simulate", "--output", p(&out)]), 1);
    assert_eq!(
        code(&["simulate", "--seed", "1", "--bogus", "--output", p(&out)]),
        1
    );
    assert_eq!(
        code(&[
            "simulate",
            "--seed",
            "1",
            "--grid",
            "3,3",
            "--output",
            p(&out)
        ]),
        1
    );
    let missing = dir.path().join("none.csv");
    assert_eq!(
        code(&[
            "smooth",
            "--input",
            p(&missing),
            "--output",
            p(&out),
            "--threshold",
            "0"
        ]),
        1
    );
    assert!(!out.exists());
}

#[test]
fn constant_input_map_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("st.csv");
    constant_stations(&input, 5.0);
    let prefix = dir.path().join("map");
    let o = run(&[
        "map",
        "--input",
        p(&input),
        "--output",
        p(&prefix),
        "--threshold",
        "1",
        "--grid",
        "7,4,0.5",
        "--date",
        "2004-01-10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(dir.path().join("map.pgm")).unwrap();
    let header = b"P5\n7 4\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 28);
    assert!(pgm[header.len()..].iter().all(|b| *b == 255));

    let csv = fs::read_to_string(dir.path().join("map.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,y,pred,se");
    assert_eq!(lines.len(), 1 + 28);
}

#[test]
fn map_grid_rows_and_origin() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("st.csv");
    assert_eq!(
        code(&[
            "simulate",
            "--seed",
            "2",
            "--grid",
            "5,4,1",
            "--n-time",
            "30",
            "--output",
            p(&input)
        ]),
        0
    );
    let prefix = dir.path().join("m");
    let o = run(&[
        "map",
        "--input",
        p(&input),
        "--output",
        p(&prefix),
        "--threshold",
        "0",
        "--grid",
        "9,6,0.5",
        "--season",
        "winter",
        "--transform",
        "logit",
        "--refit",
        "averaged",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 54);
    // defaults to the stations' lower-left corner, row-major from the origin
    assert_eq!((rows[0][0], rows[0][1]), (0.0, 0.0));
    assert_eq!((rows[8][0], rows[8][1]), (4.0, 0.0));
    assert_eq!((rows[53][0], rows[53][1]), (4.0, 2.5));
    assert!(rows.iter().all(|r| r[2] > 0.0 && r[2] < 1.0 && r[3] >= 0.0));
}

#[test]
fn pipeline_through_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("st.csv");
    let model = dir.path().join("model.txt");
    let krig = dir.path().join("k.csv");
    let smooth = dir.path().join("ex.csv");
    let cv = dir.path().join("cv.csv");
    assert_eq!(
        code(&[
            "simulate",
            "--seed",
            "4",
            "--grid",
            "4,4,1",
            "--n-time",
            "40",
            "--output",
            p(&input)
        ]),
        0
    );
    assert_eq!(
        code(&[
            "smooth",
            "--input",
            p(&input),
            "--output",
            p(&smooth),
            "--threshold",
            "-0.5,0.5",
            "--band"
        ]),
        0
    );
    let ex = fs::read_to_string(&smooth).unwrap();
    assert_eq!(ex.lines().count(), 1 + 16 * 40 * 2);
    assert!(ex
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(3).is_some_and(|se| !se.is_empty())));

    assert_eq!(
        code(&[
            "fit",
            "--input",
            p(&input),
            "--output",
            p(&model),
            "--threshold",
            "0"
        ]),
        0
    );
    assert!(fs::read_to_string(&model).unwrap().contains("nu="));
    let o = run(&[
        "krige",
        "--input",
        p(&input),
        "--output",
        p(&krig),
        "--threshold",
        "0",
        "--model",
        p(&model),
        "--target",
        "1,1",
        "--target",
        "1.5,2.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let k = fs::read_to_string(&krig).unwrap();
    assert_eq!(k.lines().count(), 1 + 40 * 2);
    // (1, 1) is a station, so the kriging standard error there is zero
    let se: f64 = k
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(se < 1e-6);

    let o = run(&[
        "crossval",
        "--input",
        p(&input),
        "--output",
        p(&cv),
        "--threshold",
        "0",
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&cv).unwrap().lines().count(), 1 + 16 * 3);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.conf");
    fs::write(&cfg, "seed = 11\ngrid = 3,2,1\nn_time = 5\n").unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(
        code(&["simulate", "--config", p(&cfg), "--output", p(&a)]),
        0
    );
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 1 + 6 * 5);
    // explicit flags override the file
    assert_eq!(
        code(&[
            "simulate",
            "--config",
            p(&cfg),
            "--n-time",
            "7",
            "--output",
            p(&b)
        ]),
        0
    );
    assert_eq!(fs::read_to_string(&b).unwrap().lines().count(), 1 + 6 * 7);

    fs::write(&cfg, "seed 11\n").unwrap();
    assert_eq!(
        code(&["simulate", "--config", p(&cfg), "--output", p(&a)]),
        1
    );
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (out, seed) in [(&a, "8"), (&b, "8"), (&c, "9")] {
        assert_eq!(
            code(&[
                "simulate",
                "--seed",
                seed,
                "--grid",
                "3,3,1",
                "--n-time",
                "10",
                "--output",
                p(out)
            ]),
            0
        );
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}
