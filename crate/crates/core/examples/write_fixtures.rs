//! Regenerates the files under `fixtures/`.

use std::path::Path;

use mop_core::fixtures;

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("two_region.task.json"), fixtures::two_region_task().to_json())?;
    std::fs::write(dir.join("shared_rule.task.json"), fixtures::shared_rule_task().to_json())?;
    std::fs::write(dir.join("world.json"), fixtures::scripted_world().to_json())?;
    Ok(())
}
