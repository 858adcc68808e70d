// egoqa: caption-log question answering and temporal localization pipeline.
//
//   egoqa digest          --config run.ini --out digested.jsonl
//   egoqa ask             --config run.ini --seed 7 --runs 5 --out qa_predictions.jsonl
//   egoqa localize        --config run.ini --seed 7 --out nlq_predictions.jsonl
//   egoqa eval            --config run.ini --paths.predictions preds.jsonl --out report.json
//   egoqa gen-refine-data --config run.ini --seed 7 --out refine.jsonl
//
// Every config key can be overridden with a flag of the same dotted name.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "egoqa/config.hpp"
#include "egoqa/pipeline.hpp"

namespace {

struct CommonFlags
{
    std::string config;
    std::optional<std::string> seed;
    std::optional<std::string> runs;
    std::optional<std::string> out;
    std::optional<std::string> record;
    std::map<std::string, std::optional<std::string>> overrides;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool llm_command)
{
    cmd->add_option("--config", flags.config, "INI config file ([section] / key = value)");
    cmd->add_option("--seed", flags.seed, "Pipeline seed (run.seed)");
    cmd->add_option("--runs", flags.runs, "Repeated completions per question (run.runs)");
    cmd->add_option("--out", flags.out, "Output path (paths.output)");
    if (llm_command)
        cmd->add_option("--record", flags.record, "Write every completion to this transcripts file");
    for (auto const& [key, _] : egoqa::config_defaults())
        cmd->add_option("--" + key, flags.overrides[key], "Override " + key)->group("Config overrides");
}

egoqa::PipelineConfig resolve(CommonFlags const& flags)
{
    egoqa::PipelineConfig cfg;
    if (!flags.config.empty()) {
        if (std::ifstream probe(flags.config); !probe)
            throw egoqa::ConfigError("config file does not exist: " + flags.config);
        cfg.load_file(flags.config);
    }
    for (auto const& [key, value] : flags.overrides) {
        if (value)
            cfg.set(key, *value);
    }
    if (flags.seed)
        cfg.set("run.seed", *flags.seed);
    if (flags.runs)
        cfg.set("run.runs", *flags.runs);
    if (flags.out)
        cfg.set("paths.output", *flags.out);
    return cfg;
}

void print_summary(egoqa::CommandReport const& report)
{
    std::cerr << report.command << ":";
    for (auto const& [k, v] : report.counts)
        std::cerr << " " << k << "=" << v;
    std::cerr << " failures=" << report.failures.size() << "\n";
    for (auto const& f : report.failures)
        std::cerr << "  failed " << f.stage << " " << (f.qid.empty() ? f.video_id : f.qid) << ": " << f.message << "\n";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Question answering and temporal localization over caption logs of first-person video"};
    app.require_subcommand(1);

    std::map<std::string, CommonFlags> flags;
    std::map<std::string, CLI::App*> commands;
    for (auto const& [name, help, llm] : {
             std::tuple{"digest", "Condense caption tracks and write them in the captions format", false},
             std::tuple{"ask", "Answer multiple-choice questions with vote-by-confidence ensembling", true},
             std::tuple{"localize", "Predict and refine temporal windows for natural-language queries", true},
             std::tuple{"eval", "Score a predictions file against ground truth", false},
             std::tuple{"gen-refine-data", "Generate balanced candidate-selection training windows", false},
         }) {
        commands[name] = app.add_subcommand(name, help);
        add_common_flags(commands[name], flags[name], llm || std::string(name) == "digest");
    }

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : egoqa::kExitUsage;
    }

    std::string name;
    for (auto const& [n, cmd] : commands) {
        if (cmd->parsed())
            name = n;
    }
    auto const& f = flags.at(name);

    egoqa::Logger log(&std::cerr);
    egoqa::RunContext ctx;
    ctx.log = &log;

    try {
        auto cfg = resolve(f);
        (void)cfg.required("paths.output");
        egoqa::CommandReport report;
        if (name == "eval") {
            report = egoqa::cmd_eval(cfg, ctx);
        } else if (name == "gen-refine-data") {
            report = egoqa::cmd_gen_refine_data(cfg, ctx);
        } else {
            (void)cfg.existing_path("paths.captions");
            bool const need_llm = name != "digest" || cfg.get("digest.merge_mode") == "llm";
            auto backends = egoqa::make_backends(cfg, need_llm);
            std::optional<egoqa::RecordingLlm> recorder;
            if (f.record && backends.llm) {
                recorder.emplace(*backends.llm);
                ctx.recorder = &*recorder;
            }
            if (name == "digest")
                report = egoqa::cmd_digest(cfg, backends, ctx);
            else if (name == "ask")
                report = egoqa::cmd_ask(cfg, backends, ctx);
            else
                report = egoqa::cmd_localize(cfg, backends, ctx);
            if (recorder) {
                std::ofstream out(*f.record);
                egoqa::write_transcripts(out, recorder->transcripts());
            }
        }
        print_summary(report);
        if (name == "eval") {
            std::ifstream summary(cfg.get("paths.output") + ".txt");
            std::cout << summary.rdbuf();
        }
        return report.exit_code();
    } catch (egoqa::ConfigError const& e) {
        std::cerr << "usage error: " << e.what() << "\n" << commands.at(name)->help();
        return egoqa::kExitUsage;
    } catch (std::exception const& e) {
        log.error(name, e.what());
        std::cerr << "error: " << e.what() << "\n";
        return egoqa::kExitFatal;
    }
}
