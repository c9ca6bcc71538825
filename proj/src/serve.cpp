#include "ricenet/serve.hpp"

#include <chrono>

#include <fmt/format.h>
#include "httplib.h"
#include "json.hpp"

#include "ricenet/image.hpp"
#include "ricenet/modelio.hpp"
#include "ricenet/predict.hpp"

namespace ricenet {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

}  // namespace

DiseaseTable parse_disease_table(std::string_view text) {
    DiseaseTable table;
    DiseaseInfo* current = nullptr;
    std::size_t line_no = 0;
    auto finish = [&](std::size_t at) {
        if (!current) return;
        for (auto [key, value] : {std::pair{"display_name", &current->display_name},
                                  std::pair{"description", &current->description},
                                  std::pair{"management_advice", &current->management_advice}}) {
            if (value->empty()) {
                throw ValidationError(fmt::format("disease data line {}: [{}] is missing '{}'", at, current->label, key));
            }
        }
    };
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ValidationError(fmt::format("disease data line {}: malformed section header", line_no));
            }
            finish(line_no);
            const std::string label(trim(line.substr(1, line.size() - 2)));
            auto [it, inserted] = table.emplace(label, DiseaseInfo{label, {}, {}, {}});
            if (!inserted) throw ValidationError(fmt::format("disease data line {}: duplicate [{}]", line_no, label));
            current = &it->second;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ValidationError(fmt::format("disease data line {}: expected 'key = value'", line_no));
        }
        if (!current) throw ValidationError(fmt::format("disease data line {}: entry before any [label]", line_no));
        const auto key = trim(line.substr(0, eq));
        const std::string value(trim(line.substr(eq + 1)));
        if (key == "display_name") {
            current->display_name = value;
        } else if (key == "description") {
            current->description = value;
        } else if (key == "management_advice") {
            current->management_advice = value;
        } else {
            throw ValidationError(fmt::format("disease data line {}: unknown key '{}'", line_no, key));
        }
    }
    finish(line_no);
    return table;
}

DiseaseTable load_disease_table(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_disease_table(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

LoadedModel load_served_model(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return {load_model(bytes), model_id(bytes)};
}

HttpResponse error_response(int status, std::string_view code, std::string_view message) {
    return json_response(status, {{"code", code}, {"message", message}});
}

InferenceService::InferenceService(std::optional<LoadedModel> model, DiseaseTable diseases, std::size_t max_body)
    : model_(std::move(model)), diseases_(std::move(diseases)), max_body_(max_body) {
    if (!model_) return;
    for (const auto& label : model_->model.class_labels()) {
        if (!diseases_.contains(label)) {
            throw ConfigError(fmt::format("model class '{}' has no entry in the disease data", label));
        }
    }
}

HttpResponse InferenceService::predict(std::span<const std::uint8_t> body, std::string_view content_type) const {
    if (body.size() > max_body_) {
        return error_response(413, "payload_too_large",
                              fmt::format("image is {} bytes; the limit is {} bytes", body.size(), max_body_));
    }
    if (!model_) return error_response(503, "model_not_loaded", "no model is loaded");

    const std::string type = lower(trim(content_type.substr(0, content_type.find(';'))));
    ImageFormat hint = ImageFormat::unknown;
    if (!type.empty() && type != "application/octet-stream") {
        hint = parse_image_format(type);
        if (hint == ImageFormat::unknown || !type.starts_with("image/")) {
            return error_response(415, "unsupported_media_type",
                                  fmt::format("content type '{}' is not image/png, image/jpeg or "
                                              "image/x-portable-pixmap",
                                              type));
        }
    }

    const auto start = std::chrono::steady_clock::now();
    Prediction p;
    try {
        p = classify_bytes(model_->model, body, hint);
    } catch (const DecodeError& e) {
        return error_response(400, "decode_error", e.what());
    } catch (const UnsupportedFormatError& e) {
        return error_response(400, "decode_error", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal_error", e.what());
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    json classes = json::array();
    for (const auto& c : p.classes) classes.push_back({{"label", c.label}, {"probability", round6(c.probability)}});
    return json_response(200, {{"model_id", model_->id}, {"classes", classes}, {"top", p.top}, {"latency_ms", ms}});
}

HttpResponse InferenceService::health() const {
    if (!model_) return error_response(503, "model_not_loaded", "no model is loaded");
    return json_response(200, {{"status", "ok"}, {"model_id", model_->id}, {"classes", model_->model.class_labels()}});
}

HttpResponse InferenceService::disease(std::string_view label) const {
    const auto it = diseases_.find(label);
    if (it == diseases_.end()) return error_response(404, "not_found", fmt::format("no disease entry for '{}'", label));
    const auto& d = it->second;
    return json_response(200, {{"label", d.label},
                               {"display_name", d.display_name},
                               {"description", d.description},
                               {"management_advice", d.management_advice}});
}

namespace {

void apply(const HttpResponse& r, httplib::Response& res) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
}

}  // namespace

HttpServer::HttpServer(const InferenceService& service, const std::optional<std::filesystem::path>& static_dir)
    : server_(std::make_unique<httplib::Server>()) {
    server_->set_payload_max_length(4 * kMaxImageBytes);
    server_->Post("/api/predict", [&service](const httplib::Request& req, httplib::Response& res) {
        const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
        apply(service.predict({data, req.body.size()}, req.get_header_value("Content-Type")), res);
    });
    server_->Get("/api/health", [&service](const httplib::Request&, httplib::Response& res) { apply(service.health(), res); });
    server_->Get(R"(/api/diseases/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        apply(service.disease(req.matches[1].str()), res);
    });
    if (static_dir) {
        if (!server_->set_mount_point("/", static_dir->string())) {
            throw IoError(fmt::format("static directory '{}' does not exist", static_dir->string()));
        }
    }
    server_->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        const char* code = res.status == 404 ? "not_found" : res.status == 413 ? "payload_too_large" : "http_error";
        apply(error_response(res.status, code, fmt::format("{} {} failed with status {}", req.method, req.path, res.status)),
              res);
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError(fmt::format("cannot bind {}:{}", host, port));
    return bound;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
    if (server_ && server_->is_running()) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace ricenet
