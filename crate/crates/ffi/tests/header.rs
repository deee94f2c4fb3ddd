use std::path::PathBuf;
use std::process::Command;

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/flowpose.h")
}

#[test]
fn header_declares_the_abi() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "FLOWPOSE_H",
        "typedef struct FpDepthMap FpDepthMap;",
        "typedef struct FpFlowField FpFlowField;",
        "typedef struct FpTrajectory FpTrajectory;",
        "FP_STATUS_OK = 0",
        "FP_STATUS_IO = 3",
        "FP_STATUS_INSUFFICIENT_DATA = 5",
        "fp_last_error_message(void)",
        "fp_solve(",
        "fp_se3_exp(",
        "fp_se3_log(",
        "fp_info_build(",
        "fp_flow_nll(",
        "fp_evaluate(",
        "fp_trajectory_read_tum(",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(header())
            .output()
        else {
            eprintln!("{compiler} not available, skipping");
            continue;
        };
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
