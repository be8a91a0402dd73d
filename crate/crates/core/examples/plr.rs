use dmlkit::aggregation::median_aggregate;
use dmlkit::demo;
use dmlkit::engine::{repeat_fit, repetition_seeds, LearnerMap};
use dmlkit::{LearnerSpec, ScoreKind, ScoreSpec};

fn main() -> dmlkit::Result<()> {
    let ds = demo::partially_linear(1000, 1);
    let learners = LearnerMap::uniform(LearnerSpec::ols());
    let spec = ScoreSpec::new(ScoreKind::Plr);
    let fits = repeat_fit(&ds, &spec, &learners, 5, &repetition_seeds(7, 5), 0.05)?;
    let agg = median_aggregate(&fits)?;
    println!("theta = {:.4}, se = {:.4}, ci = {:?}", agg.theta, agg.se, agg.ci);
    Ok(())
}
