#include "cli_config.hpp"

#include "corefusion/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>

namespace corefusion::cli {

namespace {

std::string trim(std::string s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string unquote(std::string s)
{
    s = trim(std::move(s));
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        return s.substr(1, s.size() - 2);
    return s;
}

template <class T>
T parse_number(const std::string& raw, const std::string& key)
{
    const std::string s = unquote(raw);
    T value{};
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+')
        ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (s.empty() || ec != std::errc() || ptr != last)
        fail(ErrorCode::config, "invalid value '" + s + "' for " + key);
    return value;
}

bool parse_bool(const std::string& raw, const std::string& key)
{
    const std::string s = unquote(raw);
    if (s == "true" || s == "1" || s == "yes" || s == "on")
        return true;
    if (s == "false" || s == "0" || s == "no" || s == "off")
        return false;
    fail(ErrorCode::config, "invalid boolean '" + s + "' for " + key);
}

std::vector<std::string> split_list(const std::string& raw)
{
    std::string s = unquote(raw);
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']')
        s = s.substr(1, s.size() - 2);
    std::vector<std::string> items;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string item = trim(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (!item.empty())
            items.push_back(item);
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return items;
}

std::string fmt(double v)
{
    // Shortest text that reads back to the same double.
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

using Setter = std::function<void(CliConfig&, const std::string&, const std::string&)>;

const std::map<std::string, std::map<std::string, Setter>>& setters()
{
    static const std::map<std::string, std::map<std::string, Setter>> table = {
        {"model",
         {
             {"depth", [](CliConfig& c, auto& v, auto& k) { c.model.depth = parse_number<int>(v, k); }},
             {"widths", [](CliConfig& c, auto& v, auto&) { c.model.widths = parse_int_list(v); }},
             {"thermal_in_channels",
              [](CliConfig& c, auto& v, auto& k) { c.model.thermal_in_channels = parse_number<int>(v, k); }},
             {"rgb_in_channels", [](CliConfig& c, auto& v, auto& k) { c.model.rgb_in_channels = parse_number<int>(v, k); }},
             {"blocks_per_level",
              [](CliConfig& c, auto& v, auto& k) { c.model.blocks_per_level = parse_number<int>(v, k); }},
             {"projection_dim", [](CliConfig& c, auto& v, auto& k) { c.model.projection_dim = parse_number<int>(v, k); }},
             {"temperature", [](CliConfig& c, auto& v, auto& k) { c.model.temperature = parse_number<double>(v, k); }},
             {"output_activation",
              [](CliConfig& c, auto& v, auto&) { c.model.output_activation = parse_output_activation(unquote(v)); }},
             {"seed", [](CliConfig& c, auto& v, auto& k) { c.model.seed = parse_number<std::uint64_t>(v, k); }},
             {"norm_groups", [](CliConfig& c, auto& v, auto& k) { c.model.norm_groups = parse_number<int>(v, k); }},
             {"norm_affine", [](CliConfig& c, auto& v, auto& k) { c.model.norm_affine = parse_bool(v, k); }},
         }},
        {"train",
         {
             {"learning_rate", [](CliConfig& c, auto& v, auto& k) { c.train.learning_rate = parse_number<double>(v, k); }},
             {"adam_beta1", [](CliConfig& c, auto& v, auto& k) { c.train.adam_beta1 = parse_number<double>(v, k); }},
             {"adam_beta2", [](CliConfig& c, auto& v, auto& k) { c.train.adam_beta2 = parse_number<double>(v, k); }},
             {"adam_epsilon", [](CliConfig& c, auto& v, auto& k) { c.train.adam_epsilon = parse_number<double>(v, k); }},
             {"batch_size", [](CliConfig& c, auto& v, auto& k) { c.train.batch_size = parse_number<int>(v, k); }},
             {"max_epochs", [](CliConfig& c, auto& v, auto& k) { c.train.max_epochs = parse_number<int>(v, k); }},
             {"max_steps",
              [](CliConfig& c, auto& v, auto& k) {
                  const int n = parse_number<int>(v, k);
                  c.train.max_steps = n > 0 ? std::optional<int>(n) : std::nullopt;
              }},
             {"seed", [](CliConfig& c, auto& v, auto& k) { c.train.seed = parse_number<std::uint64_t>(v, k); }},
             {"eval_every", [](CliConfig& c, auto& v, auto& k) { c.train.eval_every = parse_number<int>(v, k); }},
             {"modality_dropout",
              [](CliConfig& c, auto& v, auto& k) { c.train.modality_dropout = parse_number<double>(v, k); }},
         }},
        {"loss",
         {
             {"w_mse", [](CliConfig& c, auto& v, auto& k) { c.train.loss_weights.w_mse = parse_number<double>(v, k); }},
             {"w_psnr", [](CliConfig& c, auto& v, auto& k) { c.train.loss_weights.w_psnr = parse_number<double>(v, k); }},
             {"w_ssim", [](CliConfig& c, auto& v, auto& k) { c.train.loss_weights.w_ssim = parse_number<double>(v, k); }},
             {"beta", [](CliConfig& c, auto& v, auto& k) { c.train.loss_weights.beta = parse_number<double>(v, k); }},
         }},
        {"data",
         {
             {"root", [](CliConfig& c, auto& v, auto&) { c.data.root = unquote(v); }},
             {"seed", [](CliConfig& c, auto& v, auto& k) { c.data.seed = parse_number<std::uint64_t>(v, k); }},
             {"count", [](CliConfig& c, auto& v, auto& k) { c.data.count = parse_number<int>(v, k); }},
             {"size",
              [](CliConfig& c, auto& v, auto& k) { c.data.height = c.data.width = parse_number<int>(v, k); }},
             {"height", [](CliConfig& c, auto& v, auto& k) { c.data.height = parse_number<int>(v, k); }},
             {"width", [](CliConfig& c, auto& v, auto& k) { c.data.width = parse_number<int>(v, k); }},
             {"val_fraction", [](CliConfig& c, auto& v, auto& k) { c.data.val_fraction = parse_number<double>(v, k); }},
         }},
        {"sweep",
         {
             {"betas", [](CliConfig& c, auto& v, auto&) { c.betas = parse_real_list(v); }},
         }},
    };
    return table;
}

} // namespace

std::vector<double> parse_real_list(const std::string& text)
{
    std::vector<double> out;
    for (const auto& item : split_list(text))
        out.push_back(parse_number<double>(item, "list item"));
    require(!out.empty(), ErrorCode::config, "empty list '" + text + "'");
    return out;
}

std::vector<int> parse_int_list(const std::string& text)
{
    std::vector<int> out;
    for (const auto& item : split_list(text))
        out.push_back(parse_number<int>(item, "list item"));
    require(!out.empty(), ErrorCode::config, "empty list '" + text + "'");
    return out;
}

void CliConfig::validate() const
{
    try {
        model.validate();
        train.validate();
    } catch (const Error& e) {
        fail(ErrorCode::config, e.what());
    }
    require(data.count >= 1, ErrorCode::config, "data.count must be at least 1");
    require(data.height > 0 && data.width > 0 && data.height % kScaleFactor == 0 && data.width % kScaleFactor == 0,
            ErrorCode::config,
            "image size " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                " is not a positive multiple of 8");
    require(data.val_fraction >= 0.0 && data.val_fraction < 1.0, ErrorCode::config, "data.val_fraction must lie in [0, 1)");
    require(!betas.empty(), ErrorCode::config, "sweep.betas is empty");
    for (double b : betas)
        require(b >= 0.0 && std::isfinite(b), ErrorCode::config, "sweep betas must be finite and non-negative");
}

void load_config_file(const std::filesystem::path& path, CliConfig& cfg)
{
    require(std::filesystem::is_regular_file(path), ErrorCode::config, "config file not found: " + path.string());
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        fail(ErrorCode::config, std::string("cannot parse config: ") + e.what());
    }
    const auto& table = setters();
    for (const auto& [section, body] : tree) {
        const auto sec = table.find(section);
        if (sec == table.end())
            fail(ErrorCode::config, "unknown config section [" + section + "] in " + path.string());
        if (body.empty() && !body.data().empty())
            fail(ErrorCode::config, "config key '" + section + "' must live inside a section");
        for (const auto& [key, node] : body) {
            const auto it = sec->second.find(key);
            if (it == sec->second.end())
                fail(ErrorCode::config, "unknown config key " + section + "." + key + " in " + path.string());
            it->second(cfg, node.data(), section + "." + key);
        }
    }
}

void write_config_file(std::ostream& out, const CliConfig& cfg)
{
    const auto& m = cfg.model;
    out << "[model]\n";
    out << "depth = " << m.depth << '\n';
    out << "widths = ";
    for (std::size_t i = 0; i < m.widths.size(); ++i)
        out << (i ? "," : "") << m.widths[i];
    out << '\n';
    out << "thermal_in_channels = " << m.thermal_in_channels << '\n';
    out << "rgb_in_channels = " << m.rgb_in_channels << '\n';
    out << "blocks_per_level = " << m.blocks_per_level << '\n';
    out << "projection_dim = " << m.projection_dim << '\n';
    out << "temperature = " << fmt(m.temperature) << '\n';
    out << "output_activation = " << to_string(m.output_activation) << '\n';
    out << "seed = " << m.seed << '\n';
    out << "norm_groups = " << m.norm_groups << '\n';
    out << "norm_affine = " << (m.norm_affine ? "true" : "false") << '\n';

    const auto& t = cfg.train;
    out << "\n[train]\n";
    out << "learning_rate = " << fmt(t.learning_rate) << '\n';
    out << "adam_beta1 = " << fmt(t.adam_beta1) << '\n';
    out << "adam_beta2 = " << fmt(t.adam_beta2) << '\n';
    out << "adam_epsilon = " << fmt(t.adam_epsilon) << '\n';
    out << "batch_size = " << t.batch_size << '\n';
    out << "max_epochs = " << t.max_epochs << '\n';
    out << "max_steps = " << t.max_steps.value_or(0) << '\n';
    out << "seed = " << t.seed << '\n';
    out << "eval_every = " << t.eval_every << '\n';
    out << "modality_dropout = " << fmt(t.modality_dropout) << '\n';

    const auto& w = t.loss_weights;
    out << "\n[loss]\n";
    out << "w_mse = " << fmt(w.w_mse) << '\n';
    out << "w_psnr = " << fmt(w.w_psnr) << '\n';
    out << "w_ssim = " << fmt(w.w_ssim) << '\n';
    out << "beta = " << fmt(w.beta) << '\n';

    out << "\n[data]\n";
    if (!cfg.data.root.empty())
        out << "root = " << cfg.data.root.string() << '\n';
    out << "seed = " << cfg.data.seed << '\n';
    out << "count = " << cfg.data.count << '\n';
    out << "height = " << cfg.data.height << '\n';
    out << "width = " << cfg.data.width << '\n';
    out << "val_fraction = " << fmt(cfg.data.val_fraction) << '\n';

    out << "\n[sweep]\nbetas = ";
    for (std::size_t i = 0; i < cfg.betas.size(); ++i)
        out << (i ? "," : "") << fmt(cfg.betas[i]);
    out << '\n';
}

} // namespace corefusion::cli
