#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "ricenet/model.hpp"

namespace httplib {
class Server;
}

namespace ricenet {

inline constexpr std::size_t kMaxImageBytes = 10u * 1024u * 1024u;

struct DiseaseInfo {
    std::string label;
    std::string display_name;
    std::string description;
    std::string management_advice;

    bool operator==(const DiseaseInfo&) const = default;
};

using DiseaseTable = std::map<std::string, DiseaseInfo, std::less<>>;

/**
 * Line-oriented disease data:
 *
 *     # comment
 *     [leaf_blast]
 *     display_name = Leaf Blast
 *     description = ...
 *     management_advice = ...
 *
 * Every section needs all three keys. Throws ValidationError with the line number.
 */
DiseaseTable parse_disease_table(std::string_view text);
DiseaseTable load_disease_table(const std::filesystem::path& path);

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

struct LoadedModel {
    Model<float> model;
    std::string id;
};

LoadedModel load_served_model(const std::filesystem::path& path);

/**
 * Request handlers independent of the HTTP library. The model is read-only after
 * construction, so handlers may run concurrently.
 */
class InferenceService {
public:
    /// Throws ConfigError if a model class label has no disease entry.
    InferenceService(std::optional<LoadedModel> model, DiseaseTable diseases, std::size_t max_body = kMaxImageBytes);

    HttpResponse predict(std::span<const std::uint8_t> body, std::string_view content_type) const;
    HttpResponse health() const;
    HttpResponse disease(std::string_view label) const;

    bool has_model() const noexcept { return model_.has_value(); }

private:
    std::optional<LoadedModel> model_;
    DiseaseTable diseases_;
    std::size_t max_body_;
};

/// `{"code": ..., "message": ...}` with the given status.
HttpResponse error_response(int status, std::string_view code, std::string_view message);

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::filesystem::path> static_dir;
};

/// Routes the service's endpoints (and optional static files at `/`) onto an HTTP server.
class HttpServer {
public:
    HttpServer(const InferenceService& service, const std::optional<std::filesystem::path>& static_dir);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds without serving. Port 0 picks a free port. Returns the bound port. Throws IoError.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void listen();
    void stop();
    void wait_until_ready() const;

private:
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace ricenet
