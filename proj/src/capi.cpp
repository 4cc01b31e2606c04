#include "dwtnet/dwtnet.h"

#include <string>

#include "commands.hpp"

using namespace dwtnet;

struct dwtnet_run {
    RunConfig cfg;
};

namespace {

thread_local std::string g_last_error = "no error";

dwtnet_status set_error(dwtnet_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

// Exception -> status mapping at the library boundary.
template <typename Fn>
dwtnet_status guarded(Fn&& fn) {
    try {
        fn();
        return DWTNET_OK;
    } catch (const ConfigError& e) {
        return set_error(DWTNET_ERR_CONFIG, e.what());
    } catch (const DimensionError& e) {
        return set_error(DWTNET_ERR_DIMENSION, e.what());
    } catch (const NumericError& e) {
        return set_error(DWTNET_ERR_NUMERIC, e.what());
    } catch (const UsageError& e) {
        return set_error(DWTNET_ERR_USAGE, e.what());
    } catch (const IoError& e) {
        return set_error(DWTNET_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return set_error(DWTNET_ERR_INTERNAL, e.what());
    } catch (...) {
        return set_error(DWTNET_ERR_INTERNAL, "unknown error");
    }
}

}  // namespace

extern "C" {

const char* dwtnet_version(void) { return "0.1.0"; }

const char* dwtnet_status_name(dwtnet_status status) {
    switch (status) {
        case DWTNET_OK: return "ok";
        case DWTNET_ERR_INVALID_ARG: return "invalid argument";
        case DWTNET_ERR_CONFIG: return "configuration error";
        case DWTNET_ERR_DIMENSION: return "dimension error";
        case DWTNET_ERR_NUMERIC: return "numeric error";
        case DWTNET_ERR_USAGE: return "usage error";
        case DWTNET_ERR_IO: return "io error";
        default: return "internal error";
    }
}

const char* dwtnet_last_error(void) { return g_last_error.c_str(); }

dwtnet_status dwtnet_run_create(dwtnet_run_t* out) {
    if (!out) return set_error(DWTNET_ERR_INVALID_ARG, "dwtnet_run_create: out is NULL");
    return guarded([&] { *out = new dwtnet_run(); });
}

void dwtnet_run_destroy(dwtnet_run_t run) { delete run; }

dwtnet_status dwtnet_run_load_config(dwtnet_run_t run, const char* path) {
    if (!run || !path) return set_error(DWTNET_ERR_INVALID_ARG, "null run or path");
    return guarded([&] { run->cfg.load_file(path); });
}

dwtnet_status dwtnet_run_set(dwtnet_run_t run, const char* key, const char* value) {
    if (!run || !key || !value) return set_error(DWTNET_ERR_INVALID_ARG, "null run, key or value");
    return guarded([&] { run->cfg.set(key, value); });
}

dwtnet_status dwtnet_cmd_train(dwtnet_run_t run) {
    if (!run) return set_error(DWTNET_ERR_INVALID_ARG, "null run");
    return guarded([&] { cmd_train(run->cfg); });
}

dwtnet_status dwtnet_cmd_eval(dwtnet_run_t run) {
    if (!run) return set_error(DWTNET_ERR_INVALID_ARG, "null run");
    return guarded([&] { cmd_eval(run->cfg); });
}

dwtnet_status dwtnet_cmd_inpaint(dwtnet_run_t run) {
    if (!run) return set_error(DWTNET_ERR_INVALID_ARG, "null run");
    return guarded([&] { cmd_inpaint(run->cfg); });
}

dwtnet_status dwtnet_cmd_grad_probe(dwtnet_run_t run) {
    if (!run) return set_error(DWTNET_ERR_INVALID_ARG, "null run");
    return guarded([&] { cmd_grad_probe(run->cfg); });
}

}  // extern "C"
