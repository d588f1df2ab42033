pub const QUERY_GENERATION: &str = include_str!("../../assets/prompts/query_generation.txt");
pub const QUERY_GENERATION_USER: &str = include_str!("../../assets/prompts/query_generation_user.txt");
pub const FILE_PLAN: &str = include_str!("../../assets/prompts/file_plan.txt");
pub const FILE_PLAN_USER: &str = include_str!("../../assets/prompts/file_plan_user.txt");
pub const FILE_CODE: &str = include_str!("../../assets/prompts/file_code.txt");
pub const FILE_CODE_USER: &str = include_str!("../../assets/prompts/file_code_user.txt");
pub const VERIFY_QUERY_FILE: &str = include_str!("../../assets/prompts/verify_query_file.txt");
pub const VERIFY_QUERY_FILE_USER: &str = include_str!("../../assets/prompts/verify_query_file_user.txt");
pub const VERIFY_TRAJECTORY: &str = include_str!("../../assets/prompts/verify_trajectory.txt");
pub const VERIFY_TRAJECTORY_USER: &str = include_str!("../../assets/prompts/verify_trajectory_user.txt");
pub const DOMAIN_TAG: &str = include_str!("../../assets/prompts/domain_tag.txt");

/// Replace each `{{KEY}}` in `template`.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_owned();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}
