package com.example.iface;

public interface Callback {
    int VERSION = 2;

    void onResult(String result);

    void onError(Throwable t);

    default void onProgress(int pct) {
        if (pct > 100) {
            throw new IllegalArgumentException();
        }
    }

    static Callback noop() {
        return null;
    }
}
