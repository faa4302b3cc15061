//! Round-trips a recording through the text format and shows what the
//! validator reports for a corrupted copy.

use stratid::gen::{generate_match, GenConfig};
use stratid::trajectory::{match_to_string, parse_match, validate_match};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = generate_match(&GenConfig::default())?;
    let text = match_to_string(&m);
    let back = parse_match(text.as_bytes())?;
    assert_eq!(back, m);
    println!("{} ticks, {} bytes, round trip exact", m.ticks.len(), text.len());
    println!("{}", text.lines().take(4).collect::<Vec<_>>().join("\n"));

    let mut broken = m.clone();
    broken.ticks.swap(1, 2);
    broken.ticks[3].agents[0].x = -5.0;
    for v in validate_match(&broken) {
        println!("violation: {v}");
    }
    Ok(())
}
