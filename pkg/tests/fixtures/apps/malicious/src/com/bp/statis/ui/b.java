package com.bp.statis.ui;

public class b {
    public String j(String str) {
        if (str == null) {
            return "";
        }
        return str.trim().toUpperCase();
    }
}
