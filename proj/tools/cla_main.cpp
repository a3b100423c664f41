#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "cla/runner.hpp"
#include "cla/stream.hpp"

namespace {

int cmd_run(const std::string& config) {
    const cla::runner::ExperimentManifest m = cla::runner::parse_config(config);
    const auto res = cla::runner::run_manifest(m, cla::runner::output_root_from_env());
    for (const auto& c : res.cells) {
        if (c.failed)
            std::printf("[fail] %-24s %s\n", c.run_id.c_str(), c.error.c_str());
        else
            std::printf("[ok]   %-24s final=%.4f avg=%.4f cbp=%llu/%llu\n", c.run_id.c_str(),
                        c.final_acc, c.avg_acc, static_cast<unsigned long long>(c.cbp_counted),
                        static_cast<unsigned long long>(c.cbp_declared));
    }
    std::printf("artifacts: %s\n", res.out_path.c_str());
    return res.exit_code;
}

int cmd_parity(const std::string& config) {
    const cla::runner::ExperimentManifest m = cla::runner::parse_config(config);
    const auto data = cla::runner::materialize_dataset(m.dataset);
    const auto rep = cla::runner::manifest_parity(m, cla::runner::train_split_size(data));
    for (const auto& e : rep.entries)
        std::printf("%-16s cbp=%llu\n", e.name.c_str(), static_cast<unsigned long long>(e.cbp));
    std::printf("%s\n", rep.message.c_str());
    return rep.ok ? 0 : 1;
}

int cmd_continue_iid(const std::string& ckpt, const std::string& config) {
    const cla::runner::ExperimentManifest m = cla::runner::parse_config(config);
    return cla::runner::continue_iid(ckpt, m, cla::runner::output_root_from_env());
}

int cmd_gen_dataset(const std::string& descriptor, const std::string& path) {
    const auto d = cla::runner::materialize_dataset(descriptor);
    cla::stream::save_dataset(d, path);
    std::printf("wrote %s: N=%zu dim=%zu classes=%zu\n", path.c_str(), d.size(), d.dim,
                d.class_count);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online continual self-supervised learning workbench"};
    app.require_subcommand(1);

    std::string config, ckpt, descriptor, path;

    auto* run = app.add_subcommand("run", "execute all (strategy x seed) cells of a config");
    run->add_option("config", config, "JSON config file")->required();

    auto* parity = app.add_subcommand("parity", "validate budget parity of a config");
    parity->add_option("config", config, "JSON config file")->required();

    auto* cont = app.add_subcommand("continue-iid", "continue pretraining a checkpoint on i.i.d. data");
    cont->add_option("checkpoint", ckpt, "run checkpoint (.ckpt)")->required();
    cont->add_option("config", config, "JSON config file")->required();

    auto* gen = app.add_subcommand("gen-dataset", "write a dataset file from a descriptor");
    gen->add_option("descriptor", descriptor, "synthetic:... descriptor or input path")->required();
    gen->add_option("path", path, "output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(config);
        if (parity->parsed()) return cmd_parity(config);
        if (cont->parsed()) return cmd_continue_iid(ckpt, config);
        if (gen->parsed()) return cmd_gen_dataset(descriptor, path);
    } catch (const cla::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
