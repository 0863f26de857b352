package com.bp.statis.a;

import android.content.Context;
import java.lang.reflect.Method;

/* renamed from: com.bp.statis.a.b */
public final class b {

    /* renamed from: a */
    private static String f12a = "X9";

    /* renamed from: b */
    private static Context f13b;

    /* renamed from: a */
    public static String m24a(String str) {
        StringBuilder sb = new StringBuilder();
        for (int i = str.length() - 1; i >= 0; i--) {
            sb.append(str.charAt(i));
        }
        return sb.toString();
    }

    /* renamed from: j */
    public static /* synthetic */ Object m25j(String str) throws Exception {
        Class<?> cls = Class.forName(m24a(str));
        Method declaredMethod = cls.getDeclaredMethod(m24a("teg"), new Class[0]);
        return declaredMethod.invoke(null, new Object[0]);
    }

    /* access modifiers changed from: package-private */
    /* renamed from: c */
    public void m26c() {
        try {
            m25j(f12a);
        } catch (Exception e) {
        }
    }
}
